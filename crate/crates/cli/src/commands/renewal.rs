use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use seismostat::renewal::{
    fit_bpt_mle, fit_hier_bayes, forecast_interval_prob, parse_segments, AlphaPrior, BptParams, Forecaster, HyperParams,
};

use crate::output::num;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenewalModel {
    /// One aperiodicity shared by all segments.
    Shared,
    /// One aperiodicity per segment.
    PerSegment,
    /// Lognormal prior on the aperiodicities.
    Lognormal,
    /// Per-segment maximum likelihood plug-in.
    Plugin,
}

#[derive(Args, Debug)]
pub struct RenewalArgs {
    /// CSV with columns segment_id, interval_years.
    #[arg(long)]
    pub intervals: PathBuf,
    /// CSV with columns segment_id, open_tail_years, geodetic_T_years.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Forecast horizon in years.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub model: Option<RenewalModel>,
}

#[derive(Serialize)]
struct SegmentOut {
    id: String,
    n_intervals: usize,
    open_tail: Option<f64>,
    probability: Option<f64>,
    saturated: bool,
    params: BptParams,
}

#[derive(Serialize)]
struct RenewalOut {
    model: RenewalModel,
    horizon: f64,
    hyper: Option<HyperParams>,
    abic: Option<f64>,
    log_marginal: Option<f64>,
    segments: Vec<SegmentOut>,
}

pub fn forecast(ctx: &Ctx, a: RenewalArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("renewal-forecast")?;
    s.record("intervals", &a.intervals)?;
    s.record("segments", &a.segments)?;
    let horizon: f64 = s.req("horizon", a.horizon)?;
    let model: RenewalModel = s.req("model", a.model)?;
    let intervals = std::fs::read_to_string(&a.intervals).with_context(|| format!("cannot read {}", a.intervals.display()))?;
    let header = a
        .segments
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())))
        .transpose()?;
    let segs = parse_segments(&intervals, header.as_deref())?;
    let mut rows = Vec::new();
    let result = if model == RenewalModel::Plugin {
        for seg in &segs {
            let p = fit_bpt_mle(seg)?.params;
            let f = seg.open_tail.map(|_| forecast_interval_prob(seg, Forecaster::Plugin(p), horizon)).transpose()?;
            rows.push(SegmentOut {
                id: seg.id.clone(),
                n_intervals: seg.intervals.len(),
                open_tail: seg.open_tail,
                probability: f.map(|f| f.probability),
                saturated: f.is_some_and(|f| f.saturated),
                params: p,
            });
        }
        RenewalOut { model, horizon, hyper: None, abic: None, log_marginal: None, segments: rows }
    } else {
        let prior = match model {
            RenewalModel::Shared => AlphaPrior::Shared,
            RenewalModel::PerSegment => AlphaPrior::PerSegment,
            _ => AlphaPrior::Lognormal,
        };
        let hier = fit_hier_bayes(&segs, prior)?;
        for (seg, post) in segs.iter().zip(&hier.posteriors) {
            let f = seg.open_tail.map(|_| forecast_interval_prob(seg, Forecaster::Posterior(post), horizon)).transpose()?;
            rows.push(SegmentOut {
                id: seg.id.clone(),
                n_intervals: seg.intervals.len(),
                open_tail: seg.open_tail,
                probability: f.map(|f| f.probability),
                saturated: f.is_some_and(|f| f.saturated),
                params: post.posterior_mean(),
            });
        }
        RenewalOut { model, horizon, hyper: Some(hier.hyper), abic: Some(hier.abic), log_marginal: Some(hier.log_marginal), segments: rows }
    };
    let table: Vec<Vec<String>> = result
        .segments
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.probability.map(num).unwrap_or_default(),
                num(r.params.mean_iv),
                num(r.params.aperiodicity),
            ]
        })
        .collect();
    out.csv("segments", &["segment_id", "probability", "mean_iv", "aperiodicity"], table)?;
    out.finish(seed, s.effective(), result)
}
