//! Command-line front end: fitting, simulation, forecasting and diagnostic
//! commands that write a JSON result and CSV series to an output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};
use seismostat::catalog::{load_catalog, Catalog, CatalogFormat, FixedWidthLayout};

mod commands;
mod output;
mod settings;

use output::Output;
use settings::Settings;

#[derive(Parser)]
#[command(name = "seismostat", version, about = "Statistical seismology models for earthquake catalogs")]
struct Cli {
    /// Directory for result files.
    #[arg(long, global = true, env = "SEISMOSTAT_OUT_DIR", default_value = "seismostat-out")]
    out_dir: PathBuf,
    /// TOML file with per-command settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed, recorded in every output.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gutenberg-Richter b-value above a completeness magnitude.
    FitGr(commands::magnitude::FitGrArgs),
    /// Omori-Utsu decay of an aftershock sequence.
    FitOmori(commands::aftershock::FitOmoriArgs),
    /// Probability of an aftershock above a threshold magnitude.
    ForecastAftershock(commands::aftershock::ForecastArgs),
    /// Temporal ETAS maximum-likelihood fit.
    FitEtas(commands::etas::FitEtasArgs),
    /// Simulate a temporal ETAS catalog.
    SimulateEtas(commands::etas::SimulateArgs),
    /// Transformed-time residuals of a fitted ETAS model.
    Residuals(commands::etas::ResidualsArgs),
    /// Quiescence or activation after a change point.
    DetectAnomaly(commands::etas::AnomalyArgs),
    /// Space-time ETAS fit with an optional background iteration.
    FitStEtas(commands::spacetime::FitStArgs),
    /// Stochastic declustering with background probabilities.
    Decluster(commands::spacetime::DeclusterArgs),
    /// BPT renewal forecasts for fault segments.
    RenewalForecast(commands::renewal::RenewalArgs),
    /// Combine conditional probabilities from independent precursors.
    CombinePrecursors(commands::precursor::CombineArgs),
    /// AIC test of a covariate series as a precursor.
    FitCovariate(commands::precursor::CovariateArgs),
    /// Trend, seasonal harmonics and clustering fit.
    FitPeriodic(commands::precursor::PeriodicArgs),
    /// Single-link clusters and their foreshock/swarm/aftershock types.
    ClassifyClusters(commands::foreshock::ClassifyArgs),
    /// Foreshock probability of a growing cluster.
    ForeshockProb(commands::foreshock::ForeshockArgs),
}

/// Shared state handed to every command.
pub struct Ctx {
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Ctx {
    /// Settings for `section` and the output writer for the command.
    pub fn start(&self, section: &str) -> Result<(Settings, Output, u64)> {
        let mut s = Settings::new(section, self.config.as_deref())?;
        let seed = s.req("seed", self.seed)?;
        let out = Output::new(&self.out_dir, section)?;
        Ok((s, out, seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    FixedWidth,
}

/// Reads a catalog in the requested format.
pub fn read_catalog(path: &Path, format: Format) -> Result<Catalog> {
    let fmt = match format {
        Format::Csv => CatalogFormat::Csv,
        Format::FixedWidth => CatalogFormat::HypoFixedWidth(FixedWidthLayout::default()),
    };
    Ok(load_catalog(path, &fmt)?)
}

/// Parses `a,b`.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = parse_list(s)?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

/// A comma-separated list given as one flag value. The alias keeps clap
/// from treating the field as a repeated flag.
pub type NumList = Vec<f64>;

/// Parses a comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<NumList, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect()
}

/// Checks a list length for parameter vectors.
pub fn expect_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(anyhow!("--{name} needs {n} values, got {}", v.len()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { out_dir: cli.out_dir, config: cli.config, seed: cli.seed };
    use commands::*;
    match cli.command {
        Command::FitGr(a) => magnitude::fit_gr(&ctx, a),
        Command::FitOmori(a) => aftershock::fit_omori(&ctx, a),
        Command::ForecastAftershock(a) => aftershock::forecast(&ctx, a),
        Command::FitEtas(a) => etas::fit(&ctx, a),
        Command::SimulateEtas(a) => etas::simulate(&ctx, a),
        Command::Residuals(a) => etas::residuals(&ctx, a),
        Command::DetectAnomaly(a) => etas::anomaly(&ctx, a),
        Command::FitStEtas(a) => spacetime::fit(&ctx, a),
        Command::Decluster(a) => spacetime::decluster(&ctx, a),
        Command::RenewalForecast(a) => renewal::forecast(&ctx, a),
        Command::CombinePrecursors(a) => precursor::combine(&ctx, a),
        Command::FitCovariate(a) => precursor::covariate(&ctx, a),
        Command::FitPeriodic(a) => precursor::periodic(&ctx, a),
        Command::ClassifyClusters(a) => foreshock::classify(&ctx, a),
        Command::ForeshockProb(a) => foreshock::probability(&ctx, a),
    }

}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
