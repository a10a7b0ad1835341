use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::Serialize;
use seismostat::precursor::{
    combine_approx, combine_exact, fit_covariate, fit_covariate_model, fit_periodic, CovariateModel, CovariateSeries,
    Harmonic, ModelFamily, PrecursorSet,
};
use seismostat::FitResult;

use super::CatalogArgs;
use crate::output::num;
use crate::{parse_pair, read_catalog, Ctx, Format};

#[derive(Args, Debug)]
pub struct CombineArgs {
    /// Base probability P0.
    #[arg(long)]
    pub p0: Option<f64>,
    /// Conditional probability given one anomaly; repeat for each anomaly.
    #[arg(long = "pk", num_args = 1.., value_delimiter = ',')]
    pub pk: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct CovariateArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Covariate series CSV with columns t_days, value.
    #[arg(long, conflicts_with = "covariate_catalog")]
    pub covariate: Option<PathBuf>,
    /// Use the events of another catalog as the input series.
    #[arg(long)]
    pub covariate_catalog: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Fit only the model with the transfer term.
    #[arg(long, conflicts_with = "without_transfer")]
    pub with_transfer: bool,
    /// Fit only the model without the transfer term.
    #[arg(long)]
    pub without_transfer: bool,
    /// Include the exponential clustering kernel.
    #[arg(long)]
    pub self_kernel: Option<bool>,
    /// Degree of the trend polynomial.
    #[arg(long)]
    pub trend_order: Option<usize>,
    /// Estimate the exponent of the covariate response.
    #[arg(long)]
    pub fit_power: Option<bool>,
}

#[derive(Args, Debug)]
pub struct PeriodicArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Period T0 in days.
    #[arg(long)]
    pub period: Option<f64>,
    /// Number of harmonics K.
    #[arg(long)]
    pub harmonics: Option<usize>,
    /// Trend degree; chosen by AIC over 0-3 when omitted.
    #[arg(long)]
    pub trend_order: Option<usize>,
    /// Include the exponential clustering kernel.
    #[arg(long)]
    pub self_kernel: Option<bool>,
}

#[derive(Serialize)]
struct CombineOut {
    exact: f64,
    approx: f64,
    gains: Vec<f64>,
    total_gain: f64,
}

pub fn combine(ctx: &Ctx, a: CombineArgs) -> Result<()> {
    let (mut s, out, seed) = ctx.start("combine-precursors")?;
    let p0: f64 = s.req("p0", a.p0)?;
    let pk: Vec<f64> = s.req("pk", if a.pk.is_empty() { None } else { Some(a.pk) })?;
    let set = PrecursorSet::new(p0, pk)?;
    let approx = combine_approx(&set)?;
    let res = CombineOut { exact: combine_exact(&set)?, approx: approx.probability, gains: approx.gains, total_gain: approx.total_gain };
    out.finish(seed, s.effective(), res)
}

#[derive(Serialize)]
struct CovariateOut {
    with_transfer: Option<FitResult<CovariateModel>>,
    without_transfer: Option<FitResult<CovariateModel>>,
    delta_aic: Option<f64>,
    significant: Option<bool>,
}

pub fn covariate(ctx: &Ctx, a: CovariateArgs) -> Result<()> {
    let (mut s, out, seed) = ctx.start("fit-covariate")?;
    let cat = a.input.load(&mut s)?;
    let times = cat.times();
    let window: (f64, f64) = s.req("window", a.window)?;
    let series = match (&a.covariate, &a.covariate_catalog) {
        (Some(p), _) => {
            s.record("covariate", p)?;
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read covariate series {}", p.display()))?;
            CovariateSeries::parse_csv(&text)?
        }
        (None, Some(p)) => {
            s.record("covariate_catalog", p)?;
            CovariateSeries::from_events(&read_catalog(p, Format::Csv)?.times(), window.1)?
        }
        (None, None) if a.without_transfer => CovariateSeries::regular(window.0, 1.0, vec![0.0])?,
        (None, None) => return Err(anyhow!("give --covariate or --covariate-catalog")),
    };
    let family = ModelFamily {
        trend_order: s.req("trend_order", a.trend_order)?,
        self_kernel: s.req("self_kernel", a.self_kernel)?,
        fit_power: s.req("fit_power", a.fit_power)?,
        ..ModelFamily::default()
    };
    s.record("with_transfer", &a.with_transfer)?;
    s.record("without_transfer", &a.without_transfer)?;
    let res = if a.with_transfer {
        let f = fit_covariate_model(&times, window, Some(&series), &ModelFamily { transfer: true, ..family })?;
        CovariateOut { with_transfer: Some(f), without_transfer: None, delta_aic: None, significant: None }
    } else if a.without_transfer {
        let f = fit_covariate_model(&times, window, None, &family)?;
        CovariateOut { with_transfer: None, without_transfer: Some(f), delta_aic: None, significant: None }
    } else {
        let t = fit_covariate(&times, window, &series, &family)?;
        CovariateOut {
            delta_aic: Some(t.delta_aic),
            significant: Some(t.significant),
            with_transfer: Some(t.with_transfer),
            without_transfer: Some(t.without_transfer),
        }
    };
    out.finish(seed, s.effective(), res)
}

#[derive(Serialize)]
struct PeriodicOut {
    fit: FitResult<CovariateModel>,
    harmonics: Vec<Harmonic>,
    trend_order: usize,
    aic_by_trend_order: Vec<(usize, f64)>,
}

pub fn periodic(ctx: &Ctx, a: PeriodicArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("fit-periodic")?;
    let cat = a.input.load(&mut s)?;
    let times = cat.times();
    let window: (f64, f64) = s.req("window", a.window)?;
    let period: f64 = s.req("period", a.period)?;
    let k: usize = s.req("harmonics", a.harmonics)?;
    let self_kernel: bool = s.req("self_kernel", a.self_kernel)?;
    let orders: Vec<usize> = match s.opt("trend_order", a.trend_order)? {
        Some(j) => vec![j],
        None => (0..=3).collect(),
    };
    let mut fits = Vec::new();
    for &j in &orders {
        fits.push((j, fit_periodic(&times, window, period, k, j, self_kernel)?));
    }
    let table: Vec<(usize, f64)> = fits.iter().map(|(j, f)| (*j, f.fit.aic)).collect();
    let (j, best) = fits
        .into_iter()
        .min_by(|x, y| x.1.fit.aic.total_cmp(&y.1.fit.aic))
        .ok_or_else(|| anyhow!("no trend order was fitted"))?;
    let m = &best.fit.params;
    let rows: Vec<Vec<String>> = (0..=200)
        .map(|i| {
            let t = window.0 + period * i as f64 / 200.0;
            vec![num(t), num(m.baseline(t))]
        })
        .collect();
    out.csv("baseline", &["t", "baseline_rate"], rows)?;
    out.finish(seed, s.effective(), PeriodicOut { fit: best.fit, harmonics: best.harmonics, trend_order: j, aic_by_trend_order: table })
}
