use anyhow::{anyhow, Result};
use clap::Args;
use serde::Serialize;
use seismostat::aftershock::{
    fit_omori as fit_omori_times, fit_omori_fixed_p, fit_rj_productivity, forecast_probability, omori_expected_count,
    AftershockForecast, RjDefaults, RjParams,
};
use seismostat::catalog::Catalog;

use super::{completeness, CatalogArgs};
use crate::output::num;
use crate::{parse_pair, Ctx};

#[derive(Args, Debug)]
pub struct FitOmoriArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Mainshock time in catalog days; defaults to the largest event.
    #[arg(long)]
    pub origin: Option<f64>,
    /// Fit window S,T in days after the mainshock.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Minimum magnitude of the aftershocks used.
    #[arg(long)]
    pub mc: Option<f64>,
    /// Hold p at this value.
    #[arg(long)]
    pub fixed_p: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Mainshock magnitude.
    #[arg(long)]
    pub m0: Option<f64>,
    /// Forecast window t1,t2 in days after the mainshock.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Threshold magnitude.
    #[arg(long)]
    pub mthresh: Option<f64>,
    /// Productivity a; estimated from --catalog when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Default b-value of the sequence.
    #[arg(long)]
    pub b: Option<f64>,
    /// Default Omori c (days).
    #[arg(long)]
    pub c: Option<f64>,
    /// Default Omori p.
    #[arg(long)]
    pub p: Option<f64>,
    /// Early aftershocks for estimating a.
    #[arg(long)]
    pub catalog: Option<std::path::PathBuf>,
    /// Window S,T (days after the mainshock) of the early aftershocks.
    #[arg(long, value_parser = parse_pair)]
    pub fit_window: Option<(f64, f64)>,
    /// Mainshock time in catalog days; defaults to the largest event.
    #[arg(long)]
    pub origin: Option<f64>,
    /// Completeness magnitude of the early aftershocks.
    #[arg(long)]
    pub mc: Option<f64>,
}

/// Mainshock time: explicit, else the largest event (earliest on ties).
fn mainshock_time(cat: &Catalog, origin: Option<f64>) -> Result<f64> {
    if let Some(t) = origin {
        return Ok(t);
    }
    cat.events
        .iter()
        .copied()
        .reduce(|a, b| if b.mag > a.mag { b } else { a })
        .map(|e| e.t)
        .ok_or_else(|| anyhow!("catalog has no events"))
}

pub fn fit_omori(ctx: &Ctx, a: FitOmoriArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("fit-omori")?;
    let cat = a.input.load(&mut s)?;
    let origin = mainshock_time(&cat, s.opt("origin", a.origin)?)?;
    s.record("origin", &origin)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let mc = completeness(&cat, s.opt("mc", a.mc)?);
    s.record("mc", &mc)?;
    let times: Vec<f64> = cat
        .events
        .iter()
        .filter(|e| e.mag >= mc - 1e-9 && e.t > origin)
        .map(|e| e.t - origin)
        .filter(|&t| t > window.0 && t <= window.1)
        .collect();
    let fit = match s.opt("fixed_p", a.fixed_p)? {
        Some(p) => fit_omori_fixed_p(&times, window, p)?,
        None => fit_omori_times(&times, window)?,
    };
    let rows: Vec<Vec<String>> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| vec![num(t), num((i + 1) as f64), num(omori_expected_count(&fit.params, window.0, t))])
        .collect();
    out.csv("cumulative", &["t", "observed_cum", "predicted_cum"], rows)?;
    out.finish(seed, s.effective(), fit)
}

#[derive(Serialize)]
struct ForecastOut {
    params: RjParams,
    #[serde(flatten)]
    forecast: AftershockForecast,
}

pub fn forecast(ctx: &Ctx, a: ForecastArgs) -> Result<()> {
    let (mut s, out, seed) = ctx.start("forecast-aftershock")?;
    let m0: f64 = s.req("m0", a.m0)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let mthresh: f64 = s.req("mthresh", a.mthresh)?;
    let defaults = RjDefaults { b: s.req("b", a.b)?, c: s.req("c", a.c)?, p: s.req("p", a.p)? };
    let params = match (s.opt("a", a.a)?, a.catalog.as_ref()) {
        (Some(a_rj), _) => RjParams { a_rj, b_rj: defaults.b, c_rj: defaults.c, p_rj: defaults.p, m0 },
        (None, Some(path)) => {
            s.record("catalog", path)?;
            let cat = crate::read_catalog(path, crate::Format::Csv)?;
            let origin = mainshock_time(&cat, s.opt("origin", a.origin)?)?;
            s.record("origin", &origin)?;
            let fit_window: (f64, f64) = s.req("fit_window", a.fit_window)?;
            let mc = completeness(&cat, s.opt("mc", a.mc)?);
            s.record("mc", &mc)?;
            let (times, mags): (Vec<f64>, Vec<f64>) =
                cat.events.iter().filter(|e| e.t > origin).map(|e| (e.t - origin, e.mag)).unzip();
            fit_rj_productivity(&times, &mags, fit_window, mc, m0, &defaults)?
        }
        (None, None) => return Err(anyhow!("give either --a or --catalog with --fit-window to estimate a")),
    };
    let forecast = forecast_probability(&params, window, mthresh)?;
    out.finish(seed, s.effective(), ForecastOut { params, forecast })
}
