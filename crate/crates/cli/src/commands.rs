use std::path::{Path, PathBuf};

use copsel::config::ModelConfig;
use copsel::copula::{CopulaFamily, CopulaSpec};
use copsel::data::{
    load_count_table, validate_against_population, CountRow, CountTable, LoadOptions,
};
use copsel::design::TermSpec;
use copsel::estimators::{
    gh_with_interval, naive_among_selected, naive_prevalence, posterior_interval,
    ps_weighted_prevalence, PosteriorOptions, PrevalenceEstimate, PropensityModel,
};
use copsel::links::LinkFunction;
use copsel::model::{fit as fit_model, model_grid, FitOptions, FitResult, LambdaChoice, ModelSpec};
use copsel::simulate::{
    build_frame, derive_seed, evaluate_estimators, simulate_from_frame, DgpConfig,
    EvaluationOptions, PAPER_DISTRICTS, PAPER_POPULATION,
};
use serde::Serialize;

use crate::output::{num, opt_num, prepare_out, write_json, write_metadata, write_text, Table};
use crate::{CliError, CliResult, DataArgs, ModelArgs, Scenario, ScenarioArgs};

fn load_data(args: &DataArgs) -> CliResult<CountTable> {
    load_table(&args.data, args)
}

/// Loads `path` with the district file, leniency and exclusions of `args`.
fn load_table(path: &Path, args: &DataArgs) -> CliResult<CountTable> {
    let options = LoadOptions {
        district_file: args.districts.clone(),
        lenient_unselected_informal: args.lenient,
    };
    let loaded = load_count_table(path, &options)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    let table = if args.exclude_sections.is_empty() {
        loaded.table
    } else {
        let (kept, removed) = loaded.table.exclude_sections(&args.exclude_sections);
        log::info!(
            "excluded {} rows in sections {:?}",
            removed.len(),
            args.exclude_sections
        );
        kept
    };
    Ok(table)
}

fn parse_links(s: &str) -> CliResult<(LinkFunction, LinkFunction)> {
    let (a, b) = s.split_once('-').ok_or_else(|| {
        CliError::Usage(format!("links must look like `probit-logit`, got `{s}`"))
    })?;
    let parse = |x: &str| {
        x.parse::<LinkFunction>()
            .map_err(|e| CliError::Usage(e.to_string()))
    };
    Ok((parse(a)?, parse(b)?))
}

fn parse_copula(s: &str) -> CliResult<CopulaFamily> {
    s.parse()
        .map_err(|e: copsel::Error| CliError::Usage(e.to_string()))
}

fn load_model(args: &ModelArgs) -> CliResult<(ModelConfig, ModelSpec, FitOptions)> {
    let config = ModelConfig::load(&args.model)?;
    let mut spec = config.model_spec();
    if let Some(c) = &args.copula {
        spec.copula = parse_copula(c)?;
    }
    if let Some(l) = &args.links {
        (spec.selection_link, spec.outcome_link) = parse_links(l)?;
    }
    let mut options = config.fit_options();
    if args.bic_n.is_some() {
        options.bic_n = args.bic_n;
    }
    for w in spec.warnings() {
        log::warn!("{w}");
    }
    Ok((config, spec, options))
}

fn terms_label(terms: &[TermSpec]) -> String {
    terms
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Fixed-effect rows shaped like a regression table; penalized terms are
/// summarized by their edf instead.
fn coefficient_table(f: &FitResult) -> Table {
    let mut t = Table::new(
        "Coefficients",
        &["equation", "parameter", "estimate", "std_error", "z"],
    );
    let se = f.standard_errors();
    let mut push = |eq: &str, name: String, j: usize, value: f64| {
        let z = if se[j] > 0.0 {
            num(value / se[j])
        } else {
            String::new()
        };
        t.push(vec![eq.to_string(), name, num(value), num(se[j]), z]);
    };
    let p1 = f.delta_hat.beta1.len();
    for (eq, recipe, beta, offset) in [
        ("selection", &f.selection_design, &f.delta_hat.beta1, 0),
        ("outcome", &f.outcome_design, &f.delta_hat.beta2, p1),
    ] {
        for (enc, range) in recipe.terms.iter().zip(recipe.slices()) {
            if enc.term().is_penalized() {
                continue;
            }
            for (label, j) in enc.column_labels().into_iter().zip(range) {
                push(eq, label, j + offset, beta[j]);
            }
        }
    }
    let k = f.n_params() - 1;
    push("copula", "theta_star".into(), k, f.delta_hat.theta_star.0);
    t
}

fn term_table(f: &FitResult) -> Table {
    let mut t = Table::new("Terms", &["equation", "term", "edf", "lambda"]);
    for te in &f.term_edf {
        let label = format!("{}:{}", te.equation, te.term);
        let lambda = f
            .lambda_labels
            .iter()
            .position(|l| *l == label)
            .map(|i| num(f.lambdas[i]))
            .unwrap_or_default();
        t.push(vec![
            te.equation.clone(),
            te.term.clone(),
            num(te.edf),
            lambda,
        ]);
    }
    t
}

fn summary_table(f: &FitResult) -> Table {
    let mut t = Table::new("Fit", &["quantity", "value"]);
    let rows: Vec<(&str, String)> = vec![
        ("copula", f.spec.copula.to_string()),
        ("selection_link", f.spec.selection_link.to_string()),
        ("outcome_link", f.spec.outcome_link.to_string()),
        ("theta", num(f.theta)),
        ("kendall_tau", num(f.kendall_tau)),
        ("loglik", num(f.loglik)),
        ("penalized_loglik", num(f.penalized_loglik)),
        ("edf", num(f.edf)),
        ("aic", num(f.aic)),
        ("bic", num(f.bic)),
        ("n", num(f.n_total)),
        ("converged", f.converged.to_string()),
        ("iterations", f.iterations.to_string()),
        ("max_abs_gradient", num(f.gradient_norm)),
    ];
    for (k, v) in rows {
        t.push(vec![k.to_string(), v]);
    }
    t
}

pub fn fit(data: &DataArgs, model: &ModelArgs, out: &Path, argv: &[String]) -> CliResult<()> {
    let table = load_data(data)?;
    let (_, spec, options) = load_model(model)?;
    let f = fit_model(&spec, &table, &options)?;
    prepare_out(out)?;
    write_json(&out.join("fit.json"), &f)?;
    let (coef, terms, summary) = (coefficient_table(&f), term_table(&f), summary_table(&f));
    coef.write_csv(&out.join("coefficients.csv"))?;
    terms.write_csv(&out.join("terms.csv"))?;
    summary.write_csv(&out.join("summary.csv"))?;
    let mut notes = spec.warnings();
    notes.extend(f.diagnostics.iter().cloned());
    write_text(&out.join("report.txt"), &[&summary, &coef, &terms], &notes)?;
    write_metadata(
        out,
        "fit",
        argv,
        None,
        &[
            "fit.json",
            "coefficients.csv",
            "terms.csv",
            "summary.csv",
            "report.txt",
        ],
    )?;
    if !f.converged {
        log::warn!("the fit did not converge; see report.txt");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn model_select(
    data: &DataArgs,
    model: &Path,
    copulas: &[String],
    links: &[String],
    bic_n: Option<f64>,
    out: &Path,
    argv: &[String],
) -> CliResult<()> {
    let table = load_data(data)?;
    let config = ModelConfig::load(model)?;
    let base = config.model_spec();
    let mut options = config.fit_options();
    if bic_n.is_some() {
        options.bic_n = bic_n;
    }
    let families: Vec<CopulaFamily> = if copulas.is_empty() {
        CopulaFamily::ALL.to_vec()
    } else {
        copulas
            .iter()
            .map(|c| parse_copula(c))
            .collect::<CliResult<_>>()?
    };
    let pairs: Vec<(LinkFunction, LinkFunction)> = if links.is_empty() {
        vec![(base.selection_link, base.outcome_link)]
    } else {
        links
            .iter()
            .map(|l| parse_links(l))
            .collect::<CliResult<_>>()?
    };
    let rows = model_grid(&table, &families, &pairs, &base, &options);
    let mut t = Table::new(
        "Model comparison (ascending AIC)",
        &[
            "selection_link",
            "outcome_link",
            "copula",
            "aic",
            "bic",
            "prevalence",
            "theta",
            "edf",
            "loglik",
            "converged",
            "status",
        ],
    );
    let mut notes = Vec::new();
    for r in &rows {
        let head = vec![
            r.selection_link.to_string(),
            r.outcome_link.to_string(),
            r.copula.to_string(),
        ];
        let rest = match &r.result {
            Ok(g) => vec![
                num(g.aic),
                num(g.bic),
                num(g.prevalence),
                num(g.theta),
                num(g.edf),
                num(g.loglik),
                g.converged.to_string(),
                "ok".into(),
            ],
            Err(e) => {
                notes.push(format!(
                    "{}-{} {}: fit failed: {e}",
                    r.selection_link, r.outcome_link, r.copula
                ));
                let mut v = vec![String::new(); 7];
                v.push("failed".into());
                v
            }
        };
        t.push(head.into_iter().chain(rest).collect());
    }
    if rows.iter().all(|r| r.result.is_err()) {
        return Err(CliError::Numerical(format!(
            "every grid cell failed: {}",
            notes.join("; ")
        )));
    }
    for n in &notes {
        log::warn!("{n}");
    }
    prepare_out(out)?;
    t.write_csv(&out.join("grid.csv"))?;
    write_text(&out.join("report.txt"), &[&t], &notes)?;
    write_metadata(out, "model-select", argv, None, &["grid.csv", "report.txt"])
}

pub struct EstimateArgs {
    pub fit: PathBuf,
    pub data: DataArgs,
    pub population: Option<PathBuf>,
    pub domain: Vec<String>,
    pub draws: usize,
    pub quantiles: (f64, f64),
    pub seed: u64,
    pub among_selected: bool,
    pub propensity_lambda: f64,
}

fn domain_value<'a>(row: &'a CountRow, column: &str) -> Option<&'a str> {
    match column {
        "district" => Some(&row.district),
        "industry" => Some(&row.industry),
        "size" => Some(row.size.label()),
        _ => None,
    }
}

fn estimate_row(t: &mut Table, name: &str, e: &PrevalenceEstimate) {
    t.push(vec![
        name.to_string(),
        e.domain.clone().unwrap_or_else(|| "total".into()),
        e.n.to_string(),
        num(e.value),
        opt_num(e.lower),
        opt_num(e.upper),
    ]);
}

pub fn estimate(args: &EstimateArgs, out: &Path, argv: &[String]) -> CliResult<()> {
    let (qlo, qhi) = args.quantiles;
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo >= qhi {
        return Err(CliError::Usage(format!(
            "quantiles must satisfy 0 ≤ lower < upper ≤ 1, got {qlo},{qhi}"
        )));
    }
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let text = std::fs::read_to_string(&args.fit)?;
    let f: FitResult = serde_json::from_str(&text)?;
    let data = load_data(&args.data)?;
    let population = match &args.population {
        Some(p) => load_table(p, &args.data)?,
        None => data.clone(),
    };
    let posterior = PosteriorOptions {
        n_draws: args.draws,
        quantiles: args.quantiles,
        seed: args.seed,
    };
    let mut t = Table::new(
        "Prevalence estimates",
        &["estimator", "domain", "n", "estimate", "lower", "upper"],
    );
    let (total, _) = gh_with_interval(&f, &population, &posterior)?;
    estimate_row(&mut t, "gh", &total);
    for column in &args.domain {
        if !["district", "industry", "size"].contains(&column.as_str()) {
            return Err(CliError::Usage(format!(
                "domain `{column}` is not a categorical column (district, industry, size)"
            )));
        }
        let ests = copsel::estimators::gh_prevalence_by_domain(&f, &population, column)?;
        for (k, mut e) in ests.into_iter().enumerate() {
            let level = e.domain.clone().unwrap_or_default();
            let sub = population.filter(|r| domain_value(r, column) == Some(level.as_str()));
            let ci = posterior_interval(
                &f,
                &sub,
                &PosteriorOptions {
                    seed: derive_seed(args.seed, k as u64 + 1),
                    ..posterior
                },
            )?;
            e.lower = Some(ci.lower.min(e.value));
            e.upper = Some(ci.upper.max(e.value));
            e.domain = Some(format!("{column}={level}"));
            estimate_row(&mut t, "gh", &e);
        }
    }
    let n = population.total();
    estimate_row(&mut t, "naive", &naive_prevalence(&data, n)?);
    if args.among_selected {
        estimate_row(
            &mut t,
            "naive_among_selected",
            &naive_among_selected(&data)?,
        );
    }
    let ps = PropensityModel::fit(&data, &f.spec.selection_terms, args.propensity_lambda)?;
    estimate_row(
        &mut t,
        "ps_weighted",
        &ps_weighted_prevalence(&data, &ps, n)?,
    );
    prepare_out(out)?;
    t.write_csv(&out.join("estimates.csv"))?;
    let notes = vec![format!(
        "posterior intervals: {} draws of the outcome coefficients, quantiles {qlo} and {qhi}",
        args.draws
    )];
    write_text(&out.join("report.txt"), &[&t], &notes)?;
    write_metadata(
        out,
        "estimate",
        argv,
        Some(args.seed),
        &["estimates.csv", "report.txt"],
    )
}

fn scenario_config(args: &ScenarioArgs) -> CliResult<DgpConfig> {
    match args.scenario {
        Scenario::PaperLike => {
            if args.copula.is_some() || args.theta.is_some() || args.links.is_some() {
                return Err(CliError::Usage(
                    "--copula, --theta and --links apply to the compact scenario only".into(),
                ));
            }
            Ok(DgpConfig::paper_like(
                args.n_districts.unwrap_or(PAPER_DISTRICTS),
                args.units.unwrap_or(PAPER_POPULATION),
                args.seed,
            )?)
        }
        Scenario::Compact => {
            let family = match &args.copula {
                Some(c) => parse_copula(c)?,
                None => CopulaFamily::Gumbel,
            };
            let theta = args.theta.unwrap_or(match family {
                CopulaFamily::Gumbel => 1.93,
                CopulaFamily::Joe => 2.0,
                CopulaFamily::Clayton => 1.0,
                CopulaFamily::Normal | CopulaFamily::Amh => 0.5,
            });
            let copula =
                CopulaSpec::new(family, theta).map_err(|e| CliError::Usage(e.to_string()))?;
            let (l1, l2) = match &args.links {
                Some(l) => parse_links(l)?,
                None => (LinkFunction::Probit, LinkFunction::Logit),
            };
            Ok(DgpConfig::compact(
                copula,
                l1,
                l2,
                args.n_districts.unwrap_or(60),
                args.units.unwrap_or(50_000),
                args.seed,
            ))
        }
    }
}

/// The model file matching a scenario's data-generating process.
fn scenario_model(config: &DgpConfig) -> ModelConfig {
    ModelConfig {
        copula: config.copula.family(),
        selection_link: config.selection_link,
        outcome_link: config.outcome_link,
        selection: config.selection_terms.clone(),
        outcome: config.outcome_terms.clone(),
        smoothing: Default::default(),
        start: Default::default(),
        fit: Default::default(),
        variants: Vec::new(),
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    expected_prevalence: f64,
    realized_prevalence: f64,
    expected_selection_rate: f64,
    population: u64,
    selected: u64,
    config: &'a DgpConfig,
}

pub fn simulate(args: &ScenarioArgs, out: &Path, argv: &[String]) -> CliResult<()> {
    let config = scenario_config(args)?;
    let frame = build_frame(&config)?;
    let sim = simulate_from_frame(&frame, derive_seed(config.seed, 0))?;
    prepare_out(out)?;
    sim.table.save(&out.join("data.csv"))?;
    write_json(
        &out.join("truth.json"),
        &Truth {
            expected_prevalence: sim.expected_prevalence,
            realized_prevalence: sim.realized_prevalence,
            expected_selection_rate: frame.expected_selection_rate(),
            population: sim.table.total(),
            selected: sim.table.selected_total(),
            config: &config,
        },
    )?;
    std::fs::write(
        out.join("model.toml"),
        scenario_model(&config).to_toml_string()?,
    )?;
    write_metadata(
        out,
        "simulate",
        argv,
        Some(args.seed),
        &["data.csv", "truth.json", "model.toml"],
    )
}

pub fn evaluate(
    args: &ScenarioArgs,
    replicates: usize,
    draws: usize,
    quantiles: (f64, f64),
    lambda: Option<f64>,
    out: &Path,
    argv: &[String],
) -> CliResult<()> {
    if replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let config = scenario_config(args)?;
    let mut fit = FitOptions::default();
    if let Some(l) = lambda {
        if !(l >= 0.0) {
            return Err(CliError::Usage("--lambda must be nonnegative".into()));
        }
        let blocks = config
            .selection_terms
            .iter()
            .chain(&config.outcome_terms)
            .filter(|t| t.is_penalized())
            .count();
        fit.lambda = LambdaChoice::Fixed(vec![l; blocks]);
    }
    let options = EvaluationOptions {
        fit,
        posterior: (draws > 0).then_some(PosteriorOptions {
            n_draws: draws,
            quantiles,
            seed: args.seed,
        }),
        ..Default::default()
    };
    let report = evaluate_estimators(&config, replicates, &options)?;
    let mut summary = Table::new(
        &format!(
            "Estimators over {} replicates (truth {})",
            report.replicates,
            num(report.truth)
        ),
        &[
            "estimator",
            "replicates",
            "mean",
            "bias",
            "rmse",
            "mc_se",
            "coverage",
        ],
    );
    for s in &report.summaries {
        summary.push(vec![
            s.estimator.clone(),
            s.replicates.to_string(),
            num(s.mean),
            num(s.bias),
            num(s.rmse),
            num(s.mc_se),
            opt_num(s.coverage),
        ]);
    }
    let mut reps = Table::new(
        "",
        &[
            "replicate",
            "seed",
            "truth",
            "realized",
            "selected_rate",
            "gh",
            "gh_lower",
            "gh_upper",
            "naive",
            "naive_among_selected",
            "ps_weighted",
            "theta",
            "converged",
            "error",
        ],
    );
    for r in &report.records {
        reps.push(vec![
            r.index.to_string(),
            r.seed.to_string(),
            num(r.truth),
            num(r.realized),
            num(r.selected_rate),
            opt_num(r.gh),
            opt_num(r.gh_lower),
            opt_num(r.gh_upper),
            num(r.naive),
            num(r.naive_among_selected),
            opt_num(r.ps_weighted),
            opt_num(r.theta),
            r.converged.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    let closer = report
        .records
        .iter()
        .filter(|r| match (r.gh, r.ps_weighted) {
            (Some(g), Some(p)) => {
                (g - r.truth).abs() < (r.naive - r.truth).abs()
                    && (g - r.truth).abs() < (p - r.truth).abs()
            }
            _ => false,
        })
        .count();
    let notes = vec![
        format!(
            "{} of {} replicates failed",
            report.failures, report.replicates
        ),
        format!(
            "GH closer to the truth than naive and PS-weighted in {closer} of {} replicates",
            report.replicates
        ),
    ];
    prepare_out(out)?;
    summary.write_csv(&out.join("summary.csv"))?;
    reps.write_csv(&out.join("replicates.csv"))?;
    write_text(&out.join("report.txt"), &[&summary], &notes)?;
    write_metadata(
        out,
        "evaluate",
        argv,
        Some(args.seed),
        &["summary.csv", "replicates.csv", "report.txt"],
    )
}

pub fn sensitivity(
    data: &DataArgs,
    model: &ModelArgs,
    population: Option<&Path>,
    out: &Path,
    argv: &[String],
) -> CliResult<()> {
    let table = load_data(data)?;
    let population = match population {
        Some(p) => load_table(p, data)?,
        None => table.clone(),
    };
    let (config, base, options) = load_model(model)?;
    let mut specs = vec![base.clone()];
    specs.extend(config.variant_specs().into_iter().map(|v| ModelSpec {
        copula: base.copula,
        selection_link: base.selection_link,
        outcome_link: base.outcome_link,
        ..v
    }));
    let mut t = Table::new(
        "Sensitivity of the GH estimate",
        &[
            "variant",
            "selection_terms",
            "outcome_terms",
            "prevalence",
            "aic",
            "bic",
            "status",
        ],
    );
    let mut notes = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let name = if i == 0 {
            "base".to_string()
        } else {
            format!("variant {i}")
        };
        let result = fit_model(spec, &table, &options)
            .and_then(|f| Ok((copsel::estimators::gh_prevalence(&f, &population)?.value, f)));
        let mut row = vec![
            name.clone(),
            terms_label(&spec.selection_terms),
            terms_label(&spec.outcome_terms),
        ];
        match result {
            Ok((p, f)) => row.extend([num(p), num(f.aic), num(f.bic), "ok".to_string()]),
            Err(e) => {
                if i == 0 {
                    return Err(e.into());
                }
                notes.push(format!("{name}: fit failed: {e}"));
                row.extend([
                    String::new(),
                    String::new(),
                    String::new(),
                    "failed".to_string(),
                ]);
            }
        }
        t.push(row);
    }
    prepare_out(out)?;
    t.write_csv(&out.join("sensitivity.csv"))?;
    write_text(&out.join("report.txt"), &[&t], &notes)?;
    write_metadata(
        out,
        "sensitivity",
        argv,
        None,
        &["sensitivity.csv", "report.txt"],
    )
}

pub fn validate(data: &DataArgs, declared: u64, out: &Path, argv: &[String]) -> CliResult<()> {
    let unfiltered = DataArgs {
        exclude_sections: Vec::new(),
        ..data.clone()
    };
    let table = load_data(&unfiltered)?;
    let (_, report) = validate_against_population(&table, declared, &data.exclude_sections);
    let mut t = Table::new("Population check", &["quantity", "value"]);
    for (k, v) in [
        ("total", report.total.to_string()),
        ("declared", report.declared.to_string()),
        ("difference", report.difference.to_string()),
        ("pass", report.pass.to_string()),
        ("strata", report.strata.to_string()),
        (
            "strata_with_selection",
            report.strata_with_selection.to_string(),
        ),
        ("coverage", num(report.coverage())),
        ("excluded_sections", report.excluded_sections.join(" ")),
        ("excluded_rows", report.excluded_rows.len().to_string()),
        ("excluded_units", report.excluded_units.to_string()),
    ] {
        t.push(vec![k.to_string(), v]);
    }
    let excluded = CountTable::from_rows(
        report.excluded_rows.clone(),
        Default::default(),
        &mut Vec::new(),
    );
    prepare_out(out)?;
    t.write_csv(&out.join("validation.csv"))?;
    let mut ex = Table::new(
        "Excluded rows",
        &["district", "industry", "size", "selected", "informal", "n"],
    );
    if let Ok(ex_table) = excluded {
        for r in ex_table.rows() {
            ex.push(vec![
                r.district.clone(),
                r.industry.clone(),
                r.size.label().to_string(),
                (r.selected as u8).to_string(),
                r.informal
                    .map(|b| (b as u8).to_string())
                    .unwrap_or_default(),
                r.n.to_string(),
            ]);
        }
    }
    ex.write_csv(&out.join("excluded.csv"))?;
    write_text(&out.join("report.txt"), &[&t, &ex], &[])?;
    write_metadata(
        out,
        "validate",
        argv,
        None,
        &["validation.csv", "excluded.csv", "report.txt"],
    )?;
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "table total {} differs from the declared population {} by {}",
            report.total, report.declared, report.difference
        )))
    }
}
