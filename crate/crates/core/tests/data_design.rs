mod common;

use std::collections::BTreeMap;

use copsel::data::{read_count_table, CountRow, CountTable, SizeClass};
use copsel::design::{build_design, TermSpec};
use proptest::prelude::*;

fn row() -> impl Strategy<Value = CountRow> {
    (
        0usize..6,
        prop::sample::select(vec!["A", "C", "F", "G", "Q"]),
        prop::sample::select(SizeClass::ALL.to_vec()),
        0u8..3,
        0u64..50,
    )
        .prop_map(|(d, ind, size, cell, n)| CountRow {
            district: format!("d{d}"),
            industry: ind.to_string(),
            size,
            selected: cell > 0,
            informal: (cell > 0).then_some(cell == 2),
            n,
        })
}

fn covariates() -> impl Strategy<Value = BTreeMap<String, BTreeMap<String, f64>>> {
    prop::collection::vec((0.0f64..5.0, 0.0f64..=1.0), 6).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(d, (c, u))| {
                let m = BTreeMap::from([
                    ("complaints".to_string(), c),
                    ("unemployment".to_string(), u),
                ]);
                (format!("d{d}"), m)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialization_is_a_fixpoint(rows in prop::collection::vec(row(), 0..40), covs in covariates()) {
        let table = CountTable::from_rows(rows, covs, &mut Vec::new()).unwrap();
        let csv = table.to_csv_string().unwrap();
        let back = read_count_table(csv.as_bytes(), None, false).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert_eq!(&back.table, &table);
        prop_assert_eq!(back.table.to_csv_string().unwrap(), csv);
    }

    #[test]
    fn canonical_form_ignores_row_order(rows in prop::collection::vec(row(), 1..40), covs in covariates(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let total: u64 = rows.iter().map(|r| r.n).sum();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = CountTable::from_rows(rows, covs.clone(), &mut Vec::new()).unwrap();
        let b = CountTable::from_rows(shuffled, covs, &mut Vec::new()).unwrap();
        prop_assert_eq!(a.total(), total);
        prop_assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    }
}

#[test]
fn printed_fragment_and_literal_naive() {
    let csv = "District,Industry,Size,Selected,Informal,N\n\
               1,A,to 9,No,,20\n1,A,to 9,Yes,No,5\n1,A,10-49,No,,5\n\
               1,F,to 9,No,,188\n1,F,to 9,Yes,No,1\n1,F,to 9,Yes,Yes,3\n";
    let t = read_count_table(csv.as_bytes(), None, false).unwrap().table;
    assert_eq!(t.total(), 222);
    let naive = copsel::estimators::naive_prevalence(&t, t.total()).unwrap();
    assert_eq!(naive.value, 3.0 / 222.0);
}

#[test]
fn dropping_a_term_leaves_other_blocks_unchanged() {
    let table = common::compact_table(12, 3000, 2);
    let full = vec![
        TermSpec::Intercept,
        TermSpec::Factor("size".into()),
        TermSpec::Linear("complaints".into()),
        TermSpec::Smooth {
            covariate: "unemployment".into(),
            n_basis: 6,
        },
        TermSpec::RandomEffect("district".into()),
    ];
    let a = build_design(&full, &table).unwrap();
    for drop in [2, 4] {
        let reduced: Vec<TermSpec> = full
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, t)| t.clone())
            .collect();
        let b = build_design(&reduced, &table).unwrap();
        let kept: Vec<usize> = (0..full.len()).filter(|&i| i != drop).collect();
        for (j, &i) in kept.iter().enumerate() {
            assert_eq!(
                a.blocks[i], b.blocks[j],
                "block {i} changed after dropping {drop}"
            );
        }
    }
}

#[test]
fn recipe_rebuilds_the_same_design() {
    let table = common::compact_table(12, 3000, 2);
    let terms = vec![
        TermSpec::Intercept,
        TermSpec::Factor("size".into()),
        TermSpec::Smooth {
            covariate: "unemployment".into(),
            n_basis: 7,
        },
        TermSpec::RandomEffect("district".into()),
    ];
    let a = build_design(&terms, &table).unwrap();
    let json = serde_json::to_string(&a.recipe).unwrap();
    let recipe: copsel::design::DesignRecipe = serde_json::from_str(&json).unwrap();
    let b = recipe.build(&table).unwrap();
    assert_eq!(a.design(), b.design());
    assert_eq!(a.penalties().len(), 2);
}

#[test]
fn random_effect_columns_are_district_indicators() {
    let table = common::compact_table(7, 700, 4);
    let z = build_design(&[TermSpec::RandomEffect("district".into())], &table).unwrap();
    assert_eq!(z.ncols(), 7);
    let dense = z.design().to_dense();
    for r in 0..dense.nrows() {
        assert_eq!(dense.row(r).sum(), 1.0);
    }
    let (range, pen) = &z.penalties()[0];
    assert_eq!(range.len(), 7);
    assert_eq!(**pen, nalgebra::DMatrix::identity(7, 7));
}
