//! Aggregated count tables: one row per stratum × selection status × outcome
//! status, plus district-level numeric covariates.
//!
//! Canonical CSV layout (UTF-8, comma separated, header required):
//!
//! ```text
//! district,industry,size,selected,informal,n[,<covariate>...]
//! ```
//!
//! * `size` is one of `to 9`, `10-49`, `50-249`, `250+`.
//! * `selected` / `informal` are `0`/`1` (`No`/`Yes`, `false`/`true` are
//!   accepted on input). `informal` is empty on non-selected rows.
//! * Covariate columns are district-level numbers, sorted by name on output.
//!   Floats are written in shortest round-trip form.
//!
//! Rows are sorted by (district, industry, size, selected, informal), with
//! districts and industries compared as strings and sizes in class order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    #[serde(rename = "to 9")]
    UpTo9,
    #[serde(rename = "10-49")]
    From10To49,
    #[serde(rename = "50-249")]
    From50To249,
    #[serde(rename = "250+")]
    From250,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::UpTo9,
        SizeClass::From10To49,
        SizeClass::From50To249,
        SizeClass::From250,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SizeClass::UpTo9 => "to 9",
            SizeClass::From10To49 => "10-49",
            SizeClass::From50To249 => "50-249",
            SizeClass::From250 => "250+",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "to 9" | "0-9" => Ok(SizeClass::UpTo9),
            "10-49" => Ok(SizeClass::From10To49),
            "50-249" => Ok(SizeClass::From50To249),
            "250+" | "over 250" => Ok(SizeClass::From250),
            other => Err(Error::Data(format!("unknown size code `{other}`"))),
        }
    }
}

/// NACE section letters A–U.
pub fn is_nace_section(code: &str) -> bool {
    let mut chars = code.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if ('A'..='U').contains(&c))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StratumKey {
    pub district: String,
    pub industry: String,
    pub size: SizeClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub district: String,
    pub industry: String,
    pub size: SizeClass,
    pub selected: bool,
    /// Present iff `selected`.
    pub informal: Option<bool>,
    pub n: u64,
}

impl CountRow {
    pub fn stratum(&self) -> StratumKey {
        StratumKey {
            district: self.district.clone(),
            industry: self.industry.clone(),
            size: self.size,
        }
    }
}

/// A validated, canonical count table. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    rows: Vec<CountRow>,
    covariate_names: Vec<String>,
    district_covariates: BTreeMap<String, Vec<f64>>,
}

/// Values of a column aligned with the table rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Labels per row plus the ordered level set.
    Categorical {
        values: Vec<String>,
        levels: Vec<String>,
    },
    Numeric(Vec<f64>),
}

pub const CATEGORICAL_COLUMNS: [&str; 3] = ["district", "industry", "size"];

impl CountTable {
    /// Canonicalizes `rows`: drops n = 0 rows, merges duplicate keys, sorts.
    /// Non-fatal events are appended to `warnings`.
    pub fn from_rows(
        rows: Vec<CountRow>,
        district_covariates: BTreeMap<String, BTreeMap<String, f64>>,
        warnings: &mut Vec<String>,
    ) -> Result<Self> {
        // Covariate names come from the districts that have rows, so an
        // empty table has no covariates whatever map it was given.
        let present: BTreeSet<&str> = rows
            .iter()
            .filter(|r| r.n > 0)
            .map(|r| r.district.as_str())
            .collect();
        let mut names: BTreeSet<String> = BTreeSet::new();
        for (d, covs) in &district_covariates {
            if present.contains(d.as_str()) {
                names.extend(covs.keys().cloned());
            }
        }
        let covariate_names: Vec<String> = names.into_iter().collect();
        for name in &covariate_names {
            if CATEGORICAL_COLUMNS.contains(&name.as_str())
                || ["selected", "informal", "n"].contains(&name.as_str())
            {
                return Err(Error::Data(format!("covariate name `{name}` is reserved")));
            }
        }

        let mut merged: BTreeMap<(String, String, SizeClass, bool, Option<bool>), u64> =
            BTreeMap::new();
        let mut dropped_zero = 0usize;
        for row in rows {
            if !is_nace_section(&row.industry) {
                return Err(Error::Data(format!(
                    "unknown industry code `{}`",
                    row.industry
                )));
            }
            if row.district.is_empty() {
                return Err(Error::Data("empty district identifier".into()));
            }
            match (row.selected, row.informal) {
                (true, None) => {
                    return Err(Error::Data(format!(
                        "selected row ({}, {}, {}) has no informal status",
                        row.district, row.industry, row.size
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::Data(format!(
                        "non-selected row ({}, {}, {}) carries an informal status",
                        row.district, row.industry, row.size
                    )))
                }
                _ => {}
            }
            if row.n == 0 {
                dropped_zero += 1;
                continue;
            }
            let key = (
                row.district,
                row.industry,
                row.size,
                row.selected,
                row.informal,
            );
            let entry = merged.entry(key.clone()).or_insert(0);
            if *entry > 0 {
                warnings.push(format!(
                    "duplicate row ({}, {}, {}, selected={}, informal={:?}) merged",
                    key.0,
                    key.1,
                    key.2,
                    key.3 as u8,
                    key.4.map(|b| b as u8)
                ));
            }
            *entry += row.n;
        }
        if dropped_zero > 0 {
            warnings.push(format!("{dropped_zero} row(s) with n = 0 dropped"));
        }

        let rows: Vec<CountRow> = merged
            .into_iter()
            .map(
                |((district, industry, size, selected, informal), n)| CountRow {
                    district,
                    industry,
                    size,
                    selected,
                    informal,
                    n,
                },
            )
            .collect();

        let mut covs = BTreeMap::new();
        for row in &rows {
            if covs.contains_key(&row.district) {
                continue;
            }
            let values = match district_covariates.get(&row.district) {
                Some(m) => covariate_names
                    .iter()
                    .map(|name| {
                        m.get(name).copied().ok_or_else(|| {
                            Error::Data(format!(
                                "missing district covariate `{name}` for district `{}`",
                                row.district
                            ))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?,
                None if covariate_names.is_empty() => Vec::new(),
                None => {
                    return Err(Error::Data(format!(
                        "missing district covariates for district `{}`",
                        row.district
                    )))
                }
            };
            for (name, &v) in covariate_names.iter().zip(&values) {
                validate_covariate(name, v)?;
            }
            covs.insert(row.district.clone(), values);
        }

        Ok(CountTable {
            rows,
            covariate_names,
            district_covariates: covs,
        })
    }

    pub fn empty() -> Self {
        CountTable {
            rows: Vec::new(),
            covariate_names: Vec::new(),
            district_covariates: BTreeMap::new(),
        }
    }

    pub fn rows(&self) -> &[CountRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn district_covariate(&self, district: &str, name: &str) -> Option<f64> {
        let idx = self.covariate_names.iter().position(|c| c == name)?;
        self.district_covariates.get(district).map(|v| v[idx])
    }

    pub fn district_covariate_map(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.district_covariates
            .iter()
            .map(|(d, vals)| {
                let m = self
                    .covariate_names
                    .iter()
                    .cloned()
                    .zip(vals.iter().copied())
                    .collect();
                (d.clone(), m)
            })
            .collect()
    }

    /// Population size N = Σ n.
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.n).sum()
    }

    pub fn selected_total(&self) -> u64 {
        self.rows.iter().filter(|r| r.selected).map(|r| r.n).sum()
    }

    pub fn selected_informal_total(&self) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.selected && r.informal == Some(true))
            .map(|r| r.n)
            .sum()
    }

    pub fn has_column(&self, name: &str) -> bool {
        CATEGORICAL_COLUMNS.contains(&name) || self.covariate_names.iter().any(|c| c == name)
    }

    pub fn is_categorical(&self, name: &str) -> bool {
        CATEGORICAL_COLUMNS.contains(&name)
    }

    /// Column values aligned with [`CountTable::rows`].
    pub fn column(&self, name: &str) -> Result<Column> {
        match name {
            "district" | "industry" => {
                let values: Vec<String> = self
                    .rows
                    .iter()
                    .map(|r| {
                        if name == "district" {
                            r.district.clone()
                        } else {
                            r.industry.clone()
                        }
                    })
                    .collect();
                let levels: BTreeSet<String> = values.iter().cloned().collect();
                Ok(Column::Categorical {
                    values,
                    levels: levels.into_iter().collect(),
                })
            }
            "size" => {
                let present: BTreeSet<SizeClass> = self.rows.iter().map(|r| r.size).collect();
                Ok(Column::Categorical {
                    values: self
                        .rows
                        .iter()
                        .map(|r| r.size.label().to_string())
                        .collect(),
                    levels: present.into_iter().map(|s| s.label().to_string()).collect(),
                })
            }
            _ => {
                let idx = self
                    .covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
                Ok(Column::Numeric(
                    self.rows
                        .iter()
                        .map(|r| self.district_covariates[&r.district][idx])
                        .collect(),
                ))
            }
        }
    }

    /// Category labels of `name` in the level order used for design matrices:
    /// size classes in class order, anything else lexicographically.
    pub fn level_order(name: &str, mut levels: Vec<String>) -> Vec<String> {
        if name == "size" {
            levels.sort_by_key(|l| l.parse::<SizeClass>().map(|s| s as u8).unwrap_or(u8::MAX));
        } else {
            levels.sort();
        }
        levels.dedup();
        levels
    }

    /// Rows whose industry is not in `sections`, plus the removed rows.
    pub fn exclude_sections(&self, sections: &[String]) -> (CountTable, Vec<CountRow>) {
        let drop = |r: &CountRow| sections.iter().any(|s| s.eq_ignore_ascii_case(&r.industry));
        let removed = self.rows.iter().filter(|r| drop(r)).cloned().collect();
        (self.filter(|r| !drop(r)), removed)
    }

    /// The rows satisfying `keep`, in their canonical order, with district
    /// covariates restricted to the districts still present.
    pub fn filter(&self, keep: impl Fn(&CountRow) -> bool) -> CountTable {
        let rows: Vec<CountRow> = self.rows.iter().filter(|r| keep(r)).cloned().collect();
        let districts: BTreeSet<&str> = rows.iter().map(|r| r.district.as_str()).collect();
        let covs = self
            .district_covariates
            .iter()
            .filter(|(d, _)| districts.contains(d.as_str()))
            .map(|(d, v)| (d.clone(), v.clone()))
            .collect();
        CountTable {
            rows,
            covariate_names: self.covariate_names.clone(),
            district_covariates: covs,
        }
    }

    /// Writes the canonical CSV serialization.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec!["district", "industry", "size", "selected", "informal", "n"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.district.clone(),
                row.industry.clone(),
                row.size.label().to_string(),
                (row.selected as u8).to_string(),
                row.informal
                    .map(|b| (b as u8).to_string())
                    .unwrap_or_default(),
                row.n.to_string(),
            ];
            rec.extend(
                self.district_covariates[&row.district]
                    .iter()
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn validate_covariate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "covariate `{name}` has non-finite value {v}"
        )));
    }
    match name {
        "complaints" if v < 0.0 => Err(Error::Data(format!("complaints ratio {v} is negative"))),
        "unemployment" if !(0.0..=1.0).contains(&v) => {
            Err(Error::Data(format!("unemployment rate {v} outside [0, 1]")))
        }
        _ => Ok(()),
    }
}

/// Options for [`load_count_table`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Separate file with one row per district: `district,<covariate>...`.
    pub district_file: Option<PathBuf>,
    /// Accept `informal = No` on non-selected rows (the printed layout of the
    /// source table) and drop it with a warning instead of rejecting the row.
    pub lenient_unselected_informal: bool,
}

/// A loaded table together with the non-fatal events met while loading.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub table: CountTable,
    pub warnings: Vec<String>,
}

fn parse_bool(field: &str, what: &str, line: usize) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "yes" | "true" => Ok(true),
        "0" | "no" | "false" => Ok(false),
        other => Err(Error::Data(format!(
            "line {line}: invalid {what} value `{other}`"
        ))),
    }
}

pub fn load_count_table(path: &Path, options: &LoadOptions) -> Result<Loaded> {
    let file = std::fs::File::open(path)?;
    let district_covs = match &options.district_file {
        Some(p) => Some(read_district_file(std::fs::File::open(p)?)?),
        None => None,
    };
    read_count_table(file, district_covs, options.lenient_unselected_informal)
}

/// Parses a count table from any reader; see the module docs for the layout.
pub fn read_count_table<R: Read>(
    reader: R,
    district_file: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    lenient_unselected_informal: bool,
) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let need = |names: &[&str]| {
        find(names).ok_or_else(|| Error::Data(format!("missing required column `{}`", names[0])))
    };
    let i_district = need(&["district"])?;
    let i_industry = need(&["industry"])?;
    let i_size = need(&["size"])?;
    let i_selected = need(&["selected"])?;
    let i_informal = need(&["informal"])?;
    let i_n = need(&["n", "count"])?;
    let fixed = [i_district, i_industry, i_size, i_selected, i_informal, i_n];
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !fixed.contains(i))
        .map(|(i, h)| (i, h.to_ascii_lowercase()))
        .collect();

    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    let mut covs: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut lenient_hits = 0usize;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let district = get(i_district).to_string();
        let industry = get(i_industry).to_ascii_uppercase();
        let size: SizeClass = get(i_size)
            .parse()
            .map_err(|e: Error| Error::Data(format!("line {line}: {e}")))?;
        let selected = parse_bool(get(i_selected), "selected", line)?;
        let informal_raw = get(i_informal);
        let informal = if informal_raw.is_empty() {
            None
        } else {
            let value = parse_bool(informal_raw, "informal", line)?;
            if !selected {
                if lenient_unselected_informal && !value {
                    lenient_hits += 1;
                    None
                } else {
                    return Err(Error::Data(format!(
                        "line {line}: informal status given for a non-selected row"
                    )));
                }
            } else {
                Some(value)
            }
        };
        if selected && informal.is_none() {
            return Err(Error::Data(format!(
                "line {line}: selected row without informal status"
            )));
        }
        let n_raw = get(i_n);
        let n: u64 = match n_raw.parse::<i64>() {
            Ok(v) if v >= 0 => v as u64,
            Ok(v) => return Err(Error::Data(format!("line {line}: negative count {v}"))),
            Err(_) => return Err(Error::Data(format!("line {line}: invalid count `{n_raw}`"))),
        };
        if !is_nace_section(&industry) {
            return Err(Error::Data(format!(
                "line {line}: unknown industry code `{industry}`"
            )));
        }
        if district_file.is_none() && !cov_cols.is_empty() {
            let entry = covs.entry(district.clone()).or_default();
            for (i, name) in &cov_cols {
                let raw = get(*i);
                if raw.is_empty() {
                    return Err(Error::Data(format!(
                        "line {line}: missing district covariate `{name}`"
                    )));
                }
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Data(format!(
                        "line {line}: covariate `{name}` is not numeric: `{raw}`"
                    ))
                })?;
                match entry.get(name) {
                    Some(&prev) if prev != v => {
                        return Err(Error::Data(format!(
                            "line {line}: covariate `{name}` differs within district `{district}`"
                        )))
                    }
                    _ => {
                        entry.insert(name.clone(), v);
                    }
                }
            }
        }
        rows.push(CountRow {
            district,
            industry,
            size,
            selected,
            informal,
            n,
        });
    }
    if lenient_hits > 0 {
        warnings.push(format!(
            "{lenient_hits} non-selected row(s) carried `informal = No`; treated as unobserved"
        ));
    }
    let covs = match district_file {
        Some(file_covs) => {
            if !cov_cols.is_empty() {
                warnings
                    .push("covariate columns in the main file ignored; district file given".into());
            }
            file_covs
        }
        None => covs,
    };
    let table = CountTable::from_rows(rows, covs, &mut warnings)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Loaded { table, warnings })
}

/// Reads `district,<covariate>...` rows.
pub fn read_district_file<R: Read>(reader: R) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let i_district = headers
        .iter()
        .position(|h| h == "district")
        .ok_or_else(|| Error::Data("district file lacks a `district` column".into()))?;
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let district = rec.get(i_district).unwrap_or("").to_string();
        let mut m = BTreeMap::new();
        for (i, name) in headers.iter().enumerate() {
            if i == i_district {
                continue;
            }
            let raw = rec.get(i).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "district file line {line}: `{name}` is not numeric: `{raw}`"
                ))
            })?;
            m.insert(name.clone(), v);
        }
        if out.insert(district.clone(), m).is_some() {
            return Err(Error::Data(format!(
                "district `{district}` listed twice in district file"
            )));
        }
    }
    Ok(out)
}

/// Consistency report of a table against a declared population size.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationReport {
    pub total: u64,
    pub declared: u64,
    pub difference: i128,
    pub pass: bool,
    pub strata: usize,
    pub strata_with_selection: usize,
    pub excluded_sections: Vec<String>,
    pub excluded_rows: Vec<CountRow>,
    pub excluded_units: u64,
}

impl PopulationReport {
    pub fn coverage(&self) -> f64 {
        if self.strata == 0 {
            0.0
        } else {
            self.strata_with_selection as f64 / self.strata as f64
        }
    }
}

/// Applies the section exclusions and compares Σn with `declared`.
pub fn validate_against_population(
    table: &CountTable,
    declared: u64,
    exclude_sections: &[String],
) -> (CountTable, PopulationReport) {
    let (kept, removed) = table.exclude_sections(exclude_sections);
    let total = kept.total();
    let mut strata: BTreeMap<StratumKey, bool> = BTreeMap::new();
    for r in kept.rows() {
        *strata.entry(r.stratum()).or_insert(false) |= r.selected;
    }
    let report = PopulationReport {
        total,
        declared,
        difference: total as i128 - declared as i128,
        pass: total == declared,
        strata: strata.len(),
        strata_with_selection: strata.values().filter(|&&s| s).count(),
        excluded_sections: exclude_sections.to_vec(),
        excluded_units: removed.iter().map(|r| r.n).sum(),
        excluded_rows: removed,
    };
    (kept, report)
}
