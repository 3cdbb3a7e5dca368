#![allow(dead_code)]

use std::collections::BTreeMap;

use copsel::copula::{CopulaFamily, CopulaSpec};
use copsel::data::{CountRow, CountTable, SizeClass};
use copsel::links::LinkFunction;
use copsel::model::ModelSpec;
use copsel::simulate::{simulate_population, DgpConfig};

pub fn compact_config(
    family: CopulaFamily,
    theta: f64,
    districts: usize,
    units: u64,
    seed: u64,
) -> DgpConfig {
    DgpConfig::compact(
        CopulaSpec::new(family, theta).unwrap(),
        LinkFunction::Probit,
        LinkFunction::Logit,
        districts,
        units,
        seed,
    )
}

pub fn compact_table(districts: usize, units: u64, seed: u64) -> CountTable {
    simulate_population(&compact_config(
        CopulaFamily::Gumbel,
        1.93,
        districts,
        units,
        seed,
    ))
    .unwrap()
}

pub fn compact_spec(copula: CopulaFamily) -> ModelSpec {
    let c = compact_config(CopulaFamily::Gumbel, 1.5, 2, 10, 0);
    ModelSpec {
        selection_terms: c.selection_terms,
        outcome_terms: c.outcome_terms,
        selection_link: LinkFunction::Probit,
        outcome_link: LinkFunction::Logit,
        copula,
    }
}

/// Column of the size dummy for `size` after the intercept, if any.
pub fn size_column(size: SizeClass) -> Option<usize> {
    match size {
        SizeClass::UpTo9 => None,
        s => SizeClass::ALL.iter().position(|&x| x == s),
    }
}

/// η for the compact designs: intercept, three size dummies, one slope.
pub fn compact_eta(beta: &[f64], size: SizeClass, x: f64) -> f64 {
    let mut e = beta[0] + beta[4] * x;
    if let Some(c) = size_column(size) {
        e += beta[c];
    }
    e
}

/// The same units with every unit in its own district (covariates copied),
/// so that no two units share a row.
pub fn expand_to_units(table: &CountTable) -> CountTable {
    let covs = table.district_covariate_map();
    let mut rows = Vec::new();
    let mut new_covs = BTreeMap::new();
    let mut k = 0usize;
    for r in table.rows() {
        for _ in 0..r.n {
            let district = format!("{}#{k:06}", r.district);
            k += 1;
            new_covs.insert(district.clone(), covs[&r.district].clone());
            rows.push(CountRow {
                district,
                n: 1,
                ..r.clone()
            });
        }
    }
    CountTable::from_rows(rows, new_covs, &mut Vec::new()).unwrap()
}
