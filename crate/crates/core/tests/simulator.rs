mod common;

use common::*;
use copsel::copula::{CopulaFamily, CopulaSpec};
use copsel::links::LinkFunction;
use copsel::simulate::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kolmogorov–Smirnov distance of a sample from U(0, 1).
fn ks_uniform(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn sampled_margins_are_uniform() {
    // The 0.1% critical value of the KS statistic is about 1.95/√n.
    let n = 20_000;
    for family in CopulaFamily::ALL {
        let theta = match family {
            CopulaFamily::Normal => 0.6,
            CopulaFamily::Amh => 0.7,
            CopulaFamily::Clayton => 3.0,
            _ => 2.5,
        };
        let c = CopulaSpec::new(family, theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| sample_copula_pair(&c, &mut rng).unwrap())
            .collect();
        let crit = 1.95 / (n as f64).sqrt();
        assert!(
            ks_uniform(pairs.iter().map(|p| p.0).collect()) < crit,
            "{family} u"
        );
        assert!(
            ks_uniform(pairs.iter().map(|p| p.1).collect()) < crit,
            "{family} v"
        );
    }
}

#[test]
fn normal_sampler_agrees_with_direct_method() {
    let rho = 0.5;
    let c = CopulaSpec::new(CopulaFamily::Normal, rho).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 50_000;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let (u, v) = sample_copula_pair(&c, &mut rng).unwrap();
        a.push(u);
        b.push(v);
        let (u, v) = sample_normal_direct(rho, &mut rng);
        x.push(u);
        y.push(v);
    }
    let t1 = empirical_kendall_tau(&a, &b);
    let t2 = empirical_kendall_tau(&x, &y);
    // τ = (2/π) arcsin ρ; each estimate has sd ≈ 0.003 here.
    let tau = 2.0 / std::f64::consts::PI * rho.asin();
    assert!(
        (t1 - tau).abs() < 0.012 && (t2 - tau).abs() < 0.012,
        "{t1} {t2} {tau}"
    );
    // Joint lower-quadrant frequency against C(½, ½) = ¼ + arcsin(ρ)/(2π).
    let q = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
    let f1 = a
        .iter()
        .zip(&b)
        .filter(|(u, v)| **u < 0.5 && **v < 0.5)
        .count() as f64
        / n as f64;
    let f2 = x
        .iter()
        .zip(&y)
        .filter(|(u, v)| **u < 0.5 && **v < 0.5)
        .count() as f64
        / n as f64;
    assert!(
        (f1 - q).abs() < 0.01 && (f2 - q).abs() < 0.01,
        "{f1} {f2} {q}"
    );
}

#[test]
fn simulation_is_seed_deterministic() {
    let config = compact_config(CopulaFamily::Joe, 2.0, 5, 3000, 9);
    let a = simulate_population(&config).unwrap();
    let b = simulate_population(&config).unwrap();
    assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    let other = DgpConfig { seed: 10, ..config };
    assert_ne!(
        a.to_csv_string().unwrap(),
        simulate_population(&other)
            .unwrap()
            .to_csv_string()
            .unwrap()
    );
}

#[test]
fn frame_totals_are_preserved() {
    let config = compact_config(CopulaFamily::Clayton, 1.0, 12, 12_345, 4);
    let frame = build_frame(&config).unwrap();
    assert_eq!(frame.total(), 12_345);
    let table = simulate_from_frame(&frame, 2).unwrap().table;
    assert_eq!(table.total(), 12_345);
    assert_eq!(frame.population_table().unwrap().total(), 12_345);
}

/// Mean over replicates with its standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn rates_match_the_frame_expectations() {
    let config = compact_config(CopulaFamily::Gumbel, 1.93, 10, 4000, 12);
    let frame = build_frame(&config).unwrap();
    let mut sel = Vec::new();
    let mut prev = Vec::new();
    for i in 0..300 {
        let sim = simulate_from_frame(&frame, derive_seed(1, i)).unwrap();
        sel.push(sim.table.selected_total() as f64 / 4000.0);
        prev.push(sim.realized_prevalence);
    }
    let (m, se) = mean_se(&sel);
    assert!((m - frame.expected_selection_rate()).abs() < 4.0 * se);
    let (m, se) = mean_se(&prev);
    assert!((m - frame.expected_prevalence()).abs() < 4.0 * se);
}

#[test]
fn independent_selection_leaves_the_selected_share_unbiased() {
    // Under independence, selected units have the outcome with the same
    // probability as everyone in their stratum, so the share among the
    // selected estimates Σ n π₁ π₂ / Σ n π₁.
    let mut config = compact_config(CopulaFamily::Gumbel, 1.0, 8, 5000, 21);
    config.copula = CopulaSpec::new(CopulaFamily::Gumbel, 1.0).unwrap();
    let frame = build_frame(&config).unwrap();
    let (num, den) = frame.strata.iter().fold((0.0, 0.0), |(a, b), s| {
        let p1 = LinkFunction::Probit.prob_one(s.eta1);
        let p2 = LinkFunction::Logit.prob_one(s.eta2);
        (a + s.n as f64 * p1 * p2, b + s.n as f64 * p1)
    });
    let target = num / den;
    let mut shares = Vec::new();
    for i in 0..300 {
        let t = simulate_from_frame(&frame, derive_seed(2, i))
            .unwrap()
            .table;
        shares.push(t.selected_informal_total() as f64 / t.selected_total() as f64);
    }
    let (m, se) = mean_se(&shares);
    assert!((m - target).abs() < 4.0 * se, "{m} vs {target}");
}

#[test]
fn completely_random_selection_makes_the_selected_share_unbiased() {
    let mut config = compact_config(CopulaFamily::Gumbel, 1.0, 8, 5000, 5);
    config.true_beta1 = vec![-1.0, 0.0, 0.0, 0.0, 0.0];
    let frame = build_frame(&config).unwrap();
    let mut shares = Vec::new();
    for i in 0..300 {
        let t = simulate_from_frame(&frame, derive_seed(3, i))
            .unwrap()
            .table;
        shares.push(t.selected_informal_total() as f64 / t.selected_total() as f64);
    }
    let (m, se) = mean_se(&shares);
    assert!((m - frame.expected_prevalence()).abs() < 4.0 * se);
}

#[test]
fn positive_dependence_inflates_the_selected_share() {
    let config = compact_config(CopulaFamily::Gumbel, 3.0, 8, 20_000, 5);
    let frame = build_frame(&config).unwrap();
    let t = simulate_from_frame(&frame, 1).unwrap().table;
    let share = t.selected_informal_total() as f64 / t.selected_total() as f64;
    assert!(share > frame.expected_prevalence());
}

#[test]
fn evaluation_needs_replicates() {
    let config = compact_config(CopulaFamily::Gumbel, 1.93, 4, 2000, 1);
    let options = EvaluationOptions {
        posterior: None,
        ..Default::default()
    };
    assert!(evaluate_estimators(&config, 0, &options).is_err());
    let report = evaluate_estimators(&config, 1, &options).unwrap();
    assert_eq!(report.replicates, 1);
    assert_eq!(report.records.len(), 1);
}
