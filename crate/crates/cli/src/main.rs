//! `copsel`: fit copula sample-selection models, compare specifications,
//! estimate prevalence and run simulation studies from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes: 0 success, 1 usage, 2 data or validation, 3 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<copsel::Error> for CliError {
    fn from(e: copsel::Error) -> Self {
        if e.is_data_error() || matches!(e, copsel::Error::Io(_) | copsel::Error::Json(_)) {
            CliError::Data(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "copsel",
    version,
    about = "Copula sample-selection models for prevalence estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Count table (CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Optional district covariate file joined on `district`.
    #[arg(long)]
    pub districts: Option<PathBuf>,
    /// Accept `informal = No` on non-selected rows and drop it.
    #[arg(long)]
    pub lenient: bool,
    /// NACE sections removed before anything else, e.g. `B,D,O`.
    #[arg(long, value_delimiter = ',')]
    pub exclude_sections: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model specification (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Override the copula family of the model file.
    #[arg(long)]
    pub copula: Option<String>,
    /// Override the links as `selection-outcome`, e.g. `probit-logit`.
    #[arg(long)]
    pub links: Option<String>,
    /// Population size used in BIC (defaults to the table total).
    #[arg(long)]
    pub bic_n: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// 16 industries, 4 size classes, district random effect; ≈3% selected.
    PaperLike,
    /// One industry, 4 size classes, linear instruments.
    Compact,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "compact")]
    pub scenario: Scenario,
    /// Number of districts.
    #[arg(long)]
    pub n_districts: Option<usize>,
    /// Population size.
    #[arg(long)]
    pub units: Option<u64>,
    /// Copula family of the compact scenario.
    #[arg(long)]
    pub copula: Option<String>,
    /// Association parameter of the compact scenario.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Links of the compact scenario as `selection-outcome`.
    #[arg(long)]
    pub links: Option<String>,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write coefficient tables and a fit file.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a grid of copulas and link pairs and rank them by AIC.
    ModelSelect {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Copula families (default: all five).
        #[arg(long, value_delimiter = ',')]
        copula: Vec<String>,
        /// Link pairs `selection-outcome` (default: the model file's pair).
        #[arg(long, value_delimiter = ',')]
        links: Vec<String>,
        #[arg(long)]
        bic_n: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prevalence estimates from a fit file: GH (total and by domain),
    /// naive and propensity-weighted, with posterior intervals.
    Estimate {
        /// Fit file written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Population table for GH (default: the data).
        #[arg(long)]
        population: Option<PathBuf>,
        /// Categorical columns to break the GH estimate down by.
        #[arg(long, value_delimiter = ',')]
        domain: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        /// Lower and upper quantile of the posterior interval.
        #[arg(long, value_parser = parse_quantiles, default_value = "0.025,0.975")]
        quantiles: (f64, f64),
        #[arg(long)]
        seed: u64,
        /// Also report the share of detected cases among selected units.
        #[arg(long)]
        among_selected: bool,
        /// Ridge λ for the random-effect and smooth blocks of the propensity model.
        #[arg(long, default_value_t = 1.0)]
        propensity_lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a population count table from a scenario.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo comparison of the estimators on a scenario.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        replicates: usize,
        /// Posterior draws per replicate (0 disables intervals).
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, value_parser = parse_quantiles, default_value = "0.025,0.975")]
        quantiles: (f64, f64),
        /// Fixed λ for all penalized blocks instead of the AIC search.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit the model under the alternative term sets of the model file.
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        population: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a table against a declared population size.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        /// Declared population size N.
        #[arg(long)]
        population_size: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Fit { data, model, out } => commands::fit(&data, &model, &out, &argv),
        Command::ModelSelect {
            data,
            model,
            copula,
            links,
            bic_n,
            out,
        } => commands::model_select(&data, &model, &copula, &links, bic_n, &out, &argv),
        Command::Estimate {
            fit,
            data,
            population,
            domain,
            draws,
            quantiles,
            seed,
            among_selected,
            propensity_lambda,
            out,
        } => commands::estimate(
            &commands::EstimateArgs {
                fit,
                data,
                population,
                domain,
                draws,
                quantiles,
                seed,
                among_selected,
                propensity_lambda,
            },
            &out,
            &argv,
        ),
        Command::Simulate { scenario, out } => commands::simulate(&scenario, &out, &argv),
        Command::Evaluate {
            scenario,
            replicates,
            draws,
            quantiles,
            lambda,
            out,
        } => commands::evaluate(&scenario, replicates, draws, quantiles, lambda, &out, &argv),
        Command::Sensitivity {
            data,
            model,
            population,
            out,
        } => commands::sensitivity(&data, &model, population.as_deref(), &out, &argv),
        Command::Validate {
            data,
            population_size,
            out,
        } => commands::validate(&data, population_size, &out, &argv),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copsel: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// `lower,upper` posterior quantiles.
fn parse_quantiles(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi] = parts[..] else {
        return Err(format!("expected two comma-separated quantiles, got `{s}`"));
    };
    let parse = |x: &str| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(lo)?, parse(hi)?))
}
