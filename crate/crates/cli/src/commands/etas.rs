use anyhow::Result;
use clap::Args;
use serde::Serialize;
use seismostat::catalog::write_csv;
use seismostat::etas::{
    branching_ratio_horizon, detect_anomaly, fit_etas, fit_poisson, simulate_etas, transform_times, AnomalyVerdict, BandExit,
    EtasParams,
};
use seismostat::magnitude::GrParams;
use seismostat::FitResult;

use super::{completeness, CatalogArgs};
use crate::output::num;
use crate::settings::Settings;
use crate::{expect_len, parse_list, parse_pair, Ctx, NumList};

#[derive(Args, Debug)]
pub struct FitEtasArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Fit window S,T in catalog days.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Reference magnitude M0; defaults to the completeness magnitude.
    #[arg(long)]
    pub mref: Option<f64>,
    /// Initial mu,K,c,alpha,p.
    #[arg(long, value_parser = parse_list)]
    pub init: Option<NumList>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// mu,K,c,alpha,p.
    #[arg(long, value_parser = parse_list)]
    pub params: Option<NumList>,
    /// Reference (and completeness) magnitude.
    #[arg(long)]
    pub mref: Option<f64>,
    /// Gutenberg-Richter b-value of simulated magnitudes.
    #[arg(long)]
    pub b: Option<f64>,
    /// Simulation interval t0,t1 in days.
    #[arg(long, value_parser = parse_pair)]
    pub horizon: Option<(f64, f64)>,
}

#[derive(Args, Debug)]
pub struct ResidualsArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Model parameters mu,K,c,alpha,p; fitted when omitted.
    #[arg(long, value_parser = parse_list)]
    pub params: Option<NumList>,
    #[arg(long)]
    pub mref: Option<f64>,
    /// Initial values when fitting.
    #[arg(long, value_parser = parse_list)]
    pub init: Option<NumList>,
}

#[derive(Args, Debug)]
pub struct AnomalyArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Whole window S,T; the model is fitted on S,Tc.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Change point Tc.
    #[arg(long)]
    pub changepoint: Option<f64>,
    #[arg(long)]
    pub mref: Option<f64>,
    #[arg(long, value_parser = parse_list)]
    pub init: Option<NumList>,
}

fn params_from(v: &[f64], mref: f64, name: &str) -> Result<EtasParams> {
    expect_len(name, v, 5)?;
    let p = EtasParams { mu_bg: v[0], k_prod: v[1], c_off: v[2], alpha_m: v[3], p_exp: v[4], m_ref: mref };
    p.validate()?;
    Ok(p)
}

fn init_params(s: &mut Settings, init: Option<Vec<f64>>, mref: f64) -> Result<EtasParams> {
    let v: Vec<f64> = s.req("init", init)?;
    params_from(&v, mref, "init")
}

#[derive(Serialize)]
struct FitOut {
    fit: FitResult<EtasParams>,
    poisson_aic: f64,
    delta_aic_vs_poisson: f64,
}

pub fn fit(ctx: &Ctx, a: FitEtasArgs) -> Result<()> {
    let (mut s, out, seed) = ctx.start("fit-etas")?;
    let cat = a.input.load(&mut s)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let mref = completeness(&cat, s.opt("mref", a.mref)?);
    s.record("mref", &mref)?;
    let cat = cat.with_completeness(mref);
    let init = init_params(&mut s, a.init, mref)?;
    let fit = fit_etas(&cat, window, &init)?;
    let poisson = fit_poisson(&cat, window)?;
    let res = FitOut { poisson_aic: poisson.aic, delta_aic_vs_poisson: fit.aic - poisson.aic, fit };
    out.finish(seed, s.effective(), res)
}

#[derive(Serialize)]
struct SimOut {
    n_events: usize,
    params: EtasParams,
    b: f64,
    branching_ratio_horizon: f64,
}

pub fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("simulate-etas")?;
    let mref: f64 = s.req("mref", a.mref)?;
    let v: Vec<f64> = s.req("params", a.params)?;
    let params = params_from(&v, mref, "params")?;
    let b: f64 = s.req("b", a.b)?;
    let horizon: (f64, f64) = s.req("horizon", a.horizon)?;
    let gr = GrParams::from_b(b, mref)?;
    let cat = simulate_etas(&params, horizon, None, &gr, seed)?;
    out.raw("catalog.csv", |f| Ok(write_csv(&cat, f)?))?;
    let ratio = branching_ratio_horizon(&params, gr.beta, horizon.1 - horizon.0);
    out.finish(seed, s.effective(), SimOut { n_events: cat.len(), params, b, branching_ratio_horizon: ratio })
}

#[derive(Serialize)]
struct ResidualOut {
    params: EtasParams,
    n_events: usize,
    total: f64,
    ks_stat: f64,
    ks_pvalue: f64,
    window: (f64, f64),
}

pub fn residuals(ctx: &Ctx, a: ResidualsArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("residuals")?;
    let cat = a.input.load(&mut s)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let mref = completeness(&cat, s.opt("mref", a.mref)?);
    s.record("mref", &mref)?;
    let cat = cat.with_completeness(mref);
    let params = match a.params {
        Some(v) => {
            s.record("params", &v)?;
            params_from(&v, mref, "params")?
        }
        None => fit_etas(&cat, window, &init_params(&mut s, a.init, mref)?)?.params,
    };
    let r = transform_times(&cat, &params, window)?;
    let rows: Vec<Vec<String>> = (0..r.t.len())
        .map(|i| vec![num(r.t[i]), num(r.tau[i]), num(r.cumulative[i]), num(r.band_lo[i]), num(r.band_hi[i])])
        .collect();
    out.csv("series", &["t", "tau", "cumulative", "band_lo", "band_hi"], rows)?;
    let res = ResidualOut { params, n_events: r.t.len(), total: r.total, ks_stat: r.ks_stat, ks_pvalue: r.ks_pvalue, window };
    out.finish(seed, s.effective(), res)
}

#[derive(Serialize)]
struct AnomalyOut {
    fit: FitResult<EtasParams>,
    fit_window: (f64, f64),
    predict_window: (f64, f64),
    verdict: AnomalyVerdict,
    observed_total: usize,
    expected_total: f64,
    z_score: f64,
    exits: Vec<BandExit>,
}

pub fn anomaly(ctx: &Ctx, a: AnomalyArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("detect-anomaly")?;
    let cat = a.input.load(&mut s)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let tc: f64 = s.req("changepoint", a.changepoint)?;
    let mref = completeness(&cat, s.opt("mref", a.mref)?);
    s.record("mref", &mref)?;
    let cat = cat.with_completeness(mref);
    let init = init_params(&mut s, a.init, mref)?;
    let r = detect_anomaly(&cat, (window.0, tc), (tc, window.1), &init)?;
    let rows: Vec<Vec<String>> = r
        .points
        .iter()
        .map(|p| vec![num(p.t), num(p.observed), num(p.predicted), num(p.band_lo), num(p.band_hi)])
        .collect();
    out.csv("cumulative", &["t", "observed_cum", "predicted_cum", "band_lo", "band_hi"], rows)?;
    let res = AnomalyOut {
        fit: r.fit,
        fit_window: r.fit_window,
        predict_window: r.predict_window,
        verdict: r.verdict,
        observed_total: r.observed_total,
        expected_total: r.expected_total,
        z_score: r.z_score,
        exits: r.exits,
    };
    out.finish(seed, s.effective(), res)
}
