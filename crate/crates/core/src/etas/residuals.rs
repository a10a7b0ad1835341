//! Transformed-time residuals and relative quiescence/activation diagnostics.

use serde::{Deserialize, Serialize};

use super::{fit_etas, kernel, EtasParams};
use crate::catalog::Catalog;
use crate::error::{invalid, Result};
use crate::fit::FitResult;
use crate::numerics::{kolmogorov_pvalue, ks_uniform_statistic};

/// Event times mapped through the fitted compensator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub t: Vec<f64>,
    /// τᵢ = Λ(S, tᵢ).
    pub tau: Vec<f64>,
    /// Observed cumulative count 1, 2, …, n.
    pub cumulative: Vec<f64>,
    /// τ − 2√τ.
    pub band_lo: Vec<f64>,
    /// τ + 2√τ.
    pub band_hi: Vec<f64>,
    /// Λ(S, T).
    pub total: f64,
    /// KS distance of τ/Λ(S, T) from the uniform law.
    pub ks_stat: f64,
    pub ks_pvalue: f64,
    pub window: (f64, f64),
}

/// Antiderivative of y^(−p) vanishing at y = 1.
fn primitive(y: f64, p: f64) -> f64 {
    let q = 1.0 - p;
    if q.abs() < 1e-3 {
        let l = y.ln();
        let z = q * l;
        l * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z / 720.0)))))
    } else {
        (y.powf(q) - 1.0) / q
    }
}

/// Λ(start, t) at each of `eval_times` (ascending, all ≥ start) using the
/// full history of `catalog`.
pub(crate) fn compensator_path(catalog: &Catalog, params: &EtasParams, start: f64, eval_times: &[f64]) -> Vec<f64> {
    let (mu, k, c, p) = (params.mu_bg, params.k_prod, params.c_off, params.p_exp);
    let times: Vec<f64> = catalog.events.iter().map(|e| e.t).collect();
    let w: Vec<f64> = catalog
        .events
        .iter()
        .map(|e| (params.alpha_m * (e.mag - params.m_ref)).exp())
        .collect();
    // Prefix sums of the antiderivative at each event's integration start.
    let lower: Vec<f64> = times
        .iter()
        .zip(&w)
        .scan(0.0, |acc, (&tj, &wj)| {
            *acc += wj * primitive((start - tj).max(0.0) + c, p);
            Some(*acc)
        })
        .collect();
    eval_times
        .iter()
        .map(|&t| {
            let k_hist = times.partition_point(|&u| u < t);
            if k_hist == 0 {
                return mu * (t - start);
            }
            let upper = kernel::kernel_antiderivative(t, &times[..k_hist], &w[..k_hist], c, p);
            mu * (t - start) + k * (upper - lower[k_hist - 1])
        })
        .collect()
}

/// Time-rescaling residuals for events in (S, T].
pub fn transform_times(catalog: &Catalog, params: &EtasParams, window: (f64, f64)) -> Result<ResidualSeries> {
    params.validate()?;
    let (s, t_end) = window;
    if !(s < t_end) {
        return Err(invalid("window must satisfy S < T"));
    }
    let t: Vec<f64> = catalog
        .events
        .iter()
        .map(|e| e.t)
        .filter(|&u| u > s && u <= t_end)
        .collect();
    let tau = compensator_path(catalog, params, s, &t);
    let total = super::etas_compensator(catalog, params, window);
    let cumulative: Vec<f64> = (1..=t.len()).map(|i| i as f64).collect();
    let band_lo = tau.iter().map(|&x| x - 2.0 * x.max(0.0).sqrt()).collect();
    let band_hi = tau.iter().map(|&x| x + 2.0 * x.max(0.0).sqrt()).collect();
    let ks_stat = ks_uniform_statistic(&tau, total);
    Ok(ResidualSeries {
        ks_pvalue: kolmogorov_pvalue(ks_stat, t.len()),
        t,
        tau,
        cumulative,
        band_lo,
        band_hi,
        total,
        ks_stat,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyVerdict {
    None,
    /// Observed count below the lower band.
    Quiescence,
    /// Observed count above the upper band.
    Activation,
}

/// Observed and predicted cumulative counts since the change point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPoint {
    pub t: f64,
    pub observed: f64,
    pub predicted: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// A point where the observed count lies outside the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandExit {
    pub t: f64,
    pub direction: AnomalyVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub fit: FitResult<EtasParams>,
    pub fit_window: (f64, f64),
    pub predict_window: (f64, f64),
    /// One point per event in the prediction window plus the window end.
    pub points: Vec<AnomalyPoint>,
    /// Every point outside the ±2√Λ band.
    pub exits: Vec<BandExit>,
    /// Band position of the cumulative count at the end of the window.
    pub verdict: AnomalyVerdict,
    pub observed_total: usize,
    pub expected_total: f64,
    /// (observed − expected)/√expected at the window end.
    pub z_score: f64,
}

fn classify(observed: f64, predicted: f64) -> AnomalyVerdict {
    let half = 2.0 * predicted.max(0.0).sqrt();
    if observed < predicted - half {
        AnomalyVerdict::Quiescence
    } else if observed > predicted + half {
        AnomalyVerdict::Activation
    } else {
        AnomalyVerdict::None
    }
}

/// Fits ETAS on (S, T_c] and compares the extrapolated compensator on
/// (T_c, T] with the observed cumulative count.
pub fn detect_anomaly(
    catalog: &Catalog,
    fit_window: (f64, f64),
    predict_window: (f64, f64),
    init: &EtasParams,
) -> Result<AnomalyReport> {
    let (tc, t_end) = predict_window;
    if fit_window.1 != tc {
        return Err(invalid("the prediction window must start where the fit window ends"));
    }
    if !(t_end >= tc) {
        return Err(invalid("prediction window is inverted"));
    }
    let fit = fit_etas(catalog, fit_window, init)?;
    let params = fit.params;
    if t_end == tc {
        return Ok(AnomalyReport {
            fit,
            fit_window,
            predict_window,
            points: Vec::new(),
            exits: Vec::new(),
            verdict: AnomalyVerdict::None,
            observed_total: 0,
            expected_total: 0.0,
            z_score: 0.0,
        });
    }
    let mut eval: Vec<f64> = catalog
        .events
        .iter()
        .map(|e| e.t)
        .filter(|&u| u > tc && u <= t_end)
        .collect();
    let observed_total = eval.len();
    eval.push(t_end);
    let mut predicted = compensator_path(catalog, &params, tc, &eval);
    let last = predicted.len() - 1;
    predicted[last] = super::etas_compensator(catalog, &params, predict_window);
    let points: Vec<AnomalyPoint> = eval
        .iter()
        .zip(&predicted)
        .enumerate()
        .map(|(i, (&t, &pred))| {
            let observed = (i + 1).min(observed_total) as f64;
            let half = 2.0 * pred.max(0.0).sqrt();
            AnomalyPoint {
                t,
                observed,
                predicted: pred,
                band_lo: pred - half,
                band_hi: pred + half,
            }
        })
        .collect();
    let exits = points
        .iter()
        .filter_map(|pt| match classify(pt.observed, pt.predicted) {
            AnomalyVerdict::None => None,
            d => Some(BandExit { t: pt.t, direction: d }),
        })
        .collect();
    let end = points[last];
    let expected_total = end.predicted;
    Ok(AnomalyReport {
        fit,
        fit_window,
        predict_window,
        verdict: classify(end.observed, end.predicted),
        z_score: (end.observed - expected_total) / expected_total.sqrt(),
        points,
        exits,
        observed_total,
        expected_total,
    })
}
