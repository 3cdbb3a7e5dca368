use copsel::copula::{CopulaFamily, CopulaSpec, UnconstrainedTheta};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = CopulaFamily> {
    prop::sample::select(CopulaFamily::ALL.to_vec())
}

/// A copula with θ drawn through the unconstrained scale, kept away from the
/// box edges where everything degenerates to a Fréchet bound.
fn copula() -> impl Strategy<Value = CopulaSpec> {
    (family(), -3.0f64..3.0)
        .prop_map(|(f, s)| CopulaSpec::from_unconstrained(f, UnconstrainedTheta(s)))
}

proptest! {
    #[test]
    fn frechet_bounds(c in copula(), u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let x = c.cdf(u, v).unwrap();
        prop_assert!(x >= (u + v - 1.0).max(0.0) - 1e-12, "{c} {u} {v} {x}");
        prop_assert!(x <= u.min(v) + 1e-12, "{c} {u} {v} {x}");
    }

    #[test]
    fn boundary_identities(c in copula(), t in 0.0f64..=1.0) {
        prop_assert!(c.cdf(t, 0.0).unwrap().abs() < 1e-12);
        prop_assert!(c.cdf(0.0, t).unwrap().abs() < 1e-12);
        prop_assert!((c.cdf(t, 1.0).unwrap() - t).abs() < 1e-10);
        prop_assert!((c.cdf(1.0, t).unwrap() - t).abs() < 1e-10);
    }

    #[test]
    fn rectangles_have_nonnegative_mass(
        c in copula(),
        a in 0.0f64..1.0, b in 0.0f64..1.0, da in 0.0f64..0.5, db in 0.0f64..0.5,
    ) {
        let (u2, v2) = ((a + da).min(1.0), (b + db).min(1.0));
        let mass = c.cdf(u2, v2).unwrap() - c.cdf(a, v2).unwrap() - c.cdf(u2, b).unwrap() + c.cdf(a, b).unwrap();
        prop_assert!(mass >= -1e-12, "{c}: {mass}");
    }

    #[test]
    fn exchangeable(c in copula(), u in 0.001f64..0.999, v in 0.001f64..0.999) {
        prop_assert!((c.cdf(u, v).unwrap() - c.cdf(v, u).unwrap()).abs() < 1e-12);
        prop_assert!((c.partial_u(u, v).unwrap() - c.partial_v(v, u).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn conditional_is_a_distribution(c in copula(), u in 0.001f64..0.999, v1 in 0.001f64..0.999, v2 in 0.001f64..0.999) {
        let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
        let a = c.partial_u(u, lo).unwrap();
        let b = c.partial_u(u, hi).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
        prop_assert!(b >= a - 1e-10, "{c}: ∂C/∂u not monotone in v");
    }

    #[test]
    fn concordance_grows_with_theta(f in family(), s in -2.5f64..2.5, u in 0.01f64..0.99, v in 0.01f64..0.99) {
        let lo = CopulaSpec::from_unconstrained(f, UnconstrainedTheta(s));
        let hi = CopulaSpec::from_unconstrained(f, UnconstrainedTheta(s + 0.3));
        prop_assert!(hi.cdf(u, v).unwrap() >= lo.cdf(u, v).unwrap() - 1e-12);
        prop_assert!(hi.kendall_tau() > lo.kendall_tau());
    }

    #[test]
    fn tau_is_a_correlation(c in copula()) {
        let t = c.kendall_tau();
        prop_assert!((-1.0..=1.0).contains(&t));
        if matches!(c.family(), CopulaFamily::Clayton | CopulaFamily::Gumbel | CopulaFamily::Joe) {
            prop_assert!(t >= 0.0);
        }
        if c.family() == CopulaFamily::Amh {
            prop_assert!((-0.1817..=1.0 / 3.0).contains(&t));
        }
    }
}

#[test]
fn gumbel_tau_at_a_published_value() {
    // τ = 1 − 1/θ.
    let c = CopulaSpec::new(CopulaFamily::Gumbel, 1.93).unwrap();
    assert!((c.kendall_tau() - (1.0 - 1.0 / 1.93)).abs() < 1e-12);
}

#[test]
fn independence_members_equal_product() {
    for f in CopulaFamily::ALL {
        let Some(t) = f.independence_theta() else {
            continue;
        };
        let c = CopulaSpec::new(f, t).unwrap();
        for i in 1..20 {
            for j in 1..20 {
                let (u, v) = (i as f64 / 20.0, j as f64 / 20.0);
                assert!((c.cdf(u, v).unwrap() - u * v).abs() < 1e-10, "{c}");
            }
        }
    }
}
