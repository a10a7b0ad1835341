//! Magnitude–frequency laws: Gutenberg–Richter b-values, partial detection
//! and the time-dependent detection model for early aftershocks.
//!
//! Detected magnitudes follow the thinned exponential law
//! λ(M) ∝ e^(−βM)·Φ((M − μ_d)/σ_d). Over the whole magnitude line its
//! normalized density is
//!
//! ```text
//! β·exp(−β(M − μ_d) − β²σ_d²/2)·Φ((M − μ_d)/σ_d)
//! ```
//!
//! which is also the law of N(μ_d − βσ_d², σ_d²) + Exp(β). That identity
//! drives both the closed-form normalization and the simulator.

use std::f64::consts::{LN_10, LOG10_E};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aftershock::RjParams;
use crate::error::{invalid, Error, Result};
use crate::fit::{aic, names, FitResult};
use crate::numerics::{
    integrate_panels, ln_std_normal_cdf, minimize_with, std_normal_cdf, Bound, MinimizeOptions,
};

/// Gutenberg–Richter parameters above a cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrParams {
    pub b: f64,
    /// b·ln 10.
    pub beta: f64,
    /// log10 of the number of events at or above `mc`.
    pub a_rate: Option<f64>,
    pub mc: f64,
    pub se_b: f64,
    pub n: usize,
}

impl GrParams {
    /// Parameters for a known b-value (no sample attached).
    pub fn from_b(b: f64, mc: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(invalid("b must be positive"));
        }
        Ok(Self {
            b,
            beta: b * LN_10,
            a_rate: None,
            mc,
            se_b: f64::NAN,
            n: 0,
        })
    }
}

/// Aki–Utsu maximum-likelihood b-value with the Δ/2 bin correction.
///
/// `bin = 0` gives the continuous estimator.
pub fn fit_gr(mags: &[f64], mc: f64, bin: f64) -> Result<GrParams> {
    if mags.len() < 2 {
        return Err(invalid(format!("need at least 2 magnitudes, got {}", mags.len())));
    }
    if !(bin >= 0.0) {
        return Err(invalid("bin width must be non-negative"));
    }
    if let Some(m) = mags.iter().find(|&&m| !(m >= mc - 1e-9)) {
        return Err(invalid(format!("magnitude {m} is below the cutoff {mc}")));
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let denom = mean - mc + 0.5 * bin;
    if !(denom > 1e-12) {
        return Err(Error::Degenerate(
            "mean magnitude equals the cutoff minus half a bin".into(),
        ));
    }
    let b = LOG10_E / denom;
    Ok(GrParams {
        b,
        beta: b * LN_10,
        a_rate: Some(n.log10()),
        mc,
        se_b: b / n.sqrt(),
        n: mags.len(),
    })
}

/// Draws G–R magnitudes with slope `b` above `mc`. With `bin > 0` the
/// continuous law starts at `mc − bin/2` and values are rounded to the grid
/// `mc + k·bin`.
pub fn simulate_gr<R: Rng + ?Sized>(b: f64, mc: f64, bin: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let beta = b * LN_10;
    (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            if bin > 0.0 {
                let m = mc - 0.5 * bin + e / beta;
                mc + ((m - mc) / bin).round() * bin
            } else {
                mc + e / beta
            }
        })
        .collect()
}

/// Partial-detection parameters: 50% detection magnitude and roll-off width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub mu_d: f64,
    pub sigma_d: f64,
}

/// Probability that an event of magnitude `m` is detected, Φ((m − μ_d)/σ_d).
pub fn detection_prob(m: f64, params: &DetectionParams) -> f64 {
    std_normal_cdf((m - params.mu_d) / params.sigma_d)
}

/// Log of the normalized detected-magnitude density.
pub fn detected_log_density(m: f64, beta: f64, det: &DetectionParams) -> f64 {
    let (mu, s) = (det.mu_d, det.sigma_d);
    beta.ln() - beta * (m - mu) - 0.5 * beta * beta * s * s + ln_std_normal_cdf((m - mu) / s)
}

/// Normalized detected-magnitude density.
pub fn detected_density(m: f64, beta: f64, det: &DetectionParams) -> f64 {
    detected_log_density(m, beta, det).exp()
}

/// ∫_L^∞ e^(−βm)·Φ((m − μ_d)/σ_d) dm in closed form.
pub fn thinned_mass_above(l: f64, beta: f64, det: &DetectionParams) -> f64 {
    let (mu, s) = (det.mu_d, det.sigma_d);
    let tail = (-beta * mu + 0.5 * beta * beta * s * s).exp()
        * std_normal_cdf(-(l - mu + beta * s * s) / s);
    ((-beta * l).exp() * std_normal_cdf((l - mu) / s) + tail) / beta
}

/// Draws magnitudes from the detected-magnitude law.
pub fn simulate_detected_magnitudes<R: Rng + ?Sized>(
    beta: f64,
    det: &DetectionParams,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let shift = det.mu_d - beta * det.sigma_d * det.sigma_d;
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            let e: f64 = Exp1.sample(rng);
            shift + det.sigma_d * z + e / beta
        })
        .collect()
}

/// Fitted slope and detection parameters of a partially detected sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedMagnitudeParams {
    pub beta: f64,
    pub b: f64,
    pub detection: DetectionParams,
}

fn detected_loglik(mags: &[f64], beta: f64, det: &DetectionParams) -> f64 {
    if !(beta > 0.0 && det.sigma_d > 0.0) {
        return f64::NEG_INFINITY;
    }
    mags.iter().map(|&m| detected_log_density(m, beta, det)).sum()
}

/// Joint maximum-likelihood fit of (β, μ_d, σ_d).
pub fn fit_detected_magnitudes(mags: &[f64]) -> Result<FitResult<DetectedMagnitudeParams>> {
    fit_detected_inner(mags, None)
}

/// Fit of (μ_d, σ_d) with β held fixed.
pub fn fit_detection_fixed_beta(mags: &[f64], beta: f64) -> Result<FitResult<DetectedMagnitudeParams>> {
    if !(beta > 0.0) {
        return Err(invalid("beta must be positive"));
    }
    fit_detected_inner(mags, Some(beta))
}

fn fit_detected_inner(mags: &[f64], fixed_beta: Option<f64>) -> Result<FitResult<DetectedMagnitudeParams>> {
    if mags.len() < 50 {
        return Err(invalid(format!("need at least 50 magnitudes, got {}", mags.len())));
    }
    if mags.iter().any(|m| !m.is_finite()) {
        return Err(invalid("magnitudes must be finite"));
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let var = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let m3 = mags.iter().map(|m| (m - mean).powi(3)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate("all magnitudes are equal".into()));
    }
    // Moments of N(μ − βσ², σ²) + Exp(β): variance σ² + 1/β², third moment 2/β³.
    let beta0 = fixed_beta.unwrap_or_else(|| {
        let from_skew = if m3 > 0.0 { (2.0 / m3).cbrt() } else { 1.0 / var.sqrt() };
        from_skew.max(1.0 / var.sqrt() * 1.0001)
    });
    let s2 = (var - 1.0 / (beta0 * beta0)).max(0.05 * var);
    let sigma0 = s2.sqrt();
    let mu0 = mean + beta0 * s2 - 1.0 / beta0;

    let opts = MinimizeOptions::with_tol(1e-12);
    let (params, r, param_names) = match fixed_beta {
        None => {
            let obj = |x: &[f64]| -detected_loglik(mags, x[0], &DetectionParams { mu_d: x[1], sigma_d: x[2] });
            let r = minimize_with(
                obj,
                &[beta0, mu0, sigma0],
                &[Bound::Positive, Bound::Free, Bound::Positive],
                &opts,
            )?;
            let p = DetectedMagnitudeParams {
                beta: r.x_opt[0],
                b: r.x_opt[0] / LN_10,
                detection: DetectionParams { mu_d: r.x_opt[1], sigma_d: r.x_opt[2] },
            };
            (p, r, names(&["beta", "mu_d", "sigma_d"]))
        }
        Some(beta) => {
            let obj = |x: &[f64]| -detected_loglik(mags, beta, &DetectionParams { mu_d: x[0], sigma_d: x[1] });
            let r = minimize_with(obj, &[mu0, sigma0], &[Bound::Free, Bound::Positive], &opts)?;
            let p = DetectedMagnitudeParams {
                beta,
                b: beta / LN_10,
                detection: DetectionParams { mu_d: r.x_opt[0], sigma_d: r.x_opt[1] },
            };
            (p, r, names(&["mu_d", "sigma_d"]))
        }
    };
    let loglik = -r.f_opt;
    Ok(FitResult {
        params,
        loglik,
        aic: aic(loglik, param_names.len()),
        se: r.standard_errors(),
        param_names,
        window: (f64::NEG_INFINITY, f64::INFINITY),
        n_events: mags.len(),
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval: r.n_eval,
    })
}

/// Joint time–magnitude aftershock intensity with detection that improves
/// after the mainshock.
///
/// The 50% detection magnitude relaxes exponentially:
/// μ(t) = μ_∞ + (μ₀ − μ_∞)·e^(−t/τ_d).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyDetectionModel {
    /// Reasenberg–Jones part (a, b, c, p, M₀).
    pub rj: RjParams,
    pub mu0: f64,
    pub mu_inf: f64,
    pub tau_d: f64,
    pub sigma_d: f64,
}

impl EarlyDetectionModel {
    pub fn validate(&self) -> Result<()> {
        self.rj.validate()?;
        if !(self.tau_d > 0.0 && self.sigma_d > 0.0) {
            return Err(invalid("tau_d and sigma_d must be positive"));
        }
        if !(self.mu0 >= self.mu_inf) {
            return Err(invalid("mu0 must not be below mu_inf"));
        }
        Ok(())
    }

    /// 50% detection magnitude at time `t`.
    pub fn detection_magnitude(&self, t: f64) -> f64 {
        self.mu_inf + (self.mu0 - self.mu_inf) * (-t / self.tau_d).exp()
    }

    pub fn detection_at(&self, t: f64) -> DetectionParams {
        DetectionParams {
            mu_d: self.detection_magnitude(t),
            sigma_d: self.sigma_d,
        }
    }
}

/// λ(t, m) = 10^(a + b(M₀ − m))/(t + c)^p · Φ((m − μ(t))/σ_d).
pub fn early_aftershock_intensity(t: f64, m: f64, model: &EarlyDetectionModel) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("time {t} must be after the mainshock")));
    }
    let rj = &model.rj;
    let det = model.detection_at(t);
    let ln_rate = (rj.a_rj + rj.b_rj * (rj.m0 - m)) * LN_10 - rj.p_rj * (t + rj.c_rj).ln()
        + ln_std_normal_cdf((m - det.mu_d) / det.sigma_d);
    Ok(ln_rate.exp())
}

/// Rate of detected events with magnitude ≥ `m_min` at time `t`, integrated
/// over magnitude in closed form. `m_min = −∞` integrates the whole line.
pub fn early_aftershock_rate(t: f64, m_min: f64, model: &EarlyDetectionModel) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("time {t} must be after the mainshock")));
    }
    let rj = &model.rj;
    let beta = rj.b_rj * LN_10;
    let det = model.detection_at(t);
    let mass = if m_min == f64::NEG_INFINITY {
        (-beta * det.mu_d + 0.5 * beta * beta * det.sigma_d * det.sigma_d).exp() / beta
    } else {
        thinned_mass_above(m_min, beta, &det)
    };
    Ok(10f64.powf(rj.a_rj + rj.b_rj * rj.m0) * (t + rj.c_rj).powf(-rj.p_rj) * mass)
}

fn early_loglik(times: &[f64], mags: &[f64], window: (f64, f64), m_min: f64, model: &EarlyDetectionModel) -> f64 {
    if model.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (&t, &m) in times.iter().zip(mags) {
        match early_aftershock_intensity(t, m, model) {
            Ok(v) if v > 0.0 => sum += v.ln(),
            _ => return f64::NEG_INFINITY,
        }
    }
    let integral = integrate_panels(
        |t| early_aftershock_rate(t, m_min, model).unwrap_or(f64::NAN),
        window.0,
        window.1,
        1e-10,
        16,
    );
    match integral {
        Ok(v) => sum - v,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximum-likelihood fit of the early-aftershock detection model on
/// (S, T] from events with magnitude ≥ `m_min`.
///
/// Free parameters: a, b, c, p, μ_∞, μ₀ − μ_∞, τ_d, σ_d; M₀ is fixed.
pub fn fit_early_aftershocks(
    times: &[f64],
    mags: &[f64],
    window: (f64, f64),
    m_min: f64,
    init: &EarlyDetectionModel,
) -> Result<FitResult<EarlyDetectionModel>> {
    if times.len() != mags.len() {
        return Err(invalid("times and magnitudes differ in length"));
    }
    init.validate()?;
    let (s, t_end) = window;
    if !(s > 0.0 && s < t_end) {
        return Err(invalid("window must satisfy 0 < S < T"));
    }
    let (t_obs, m_obs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(mags)
        .filter(|(&t, &m)| t > s && t <= t_end && m >= m_min)
        .map(|(&t, &m)| (t, m))
        .unzip();
    if t_obs.len() < 50 {
        return Err(invalid("need at least 50 events in the window"));
    }
    let m0 = init.rj.m0;
    let unpack = |x: &[f64]| EarlyDetectionModel {
        rj: RjParams {
            a_rj: x[0],
            b_rj: x[1],
            c_rj: x[2],
            p_rj: x[3],
            m0,
        },
        mu_inf: x[4],
        mu0: x[4] + x[5],
        tau_d: x[6],
        sigma_d: x[7],
    };
    let x0 = [
        init.rj.a_rj,
        init.rj.b_rj,
        init.rj.c_rj,
        init.rj.p_rj,
        init.mu_inf,
        (init.mu0 - init.mu_inf).max(1e-3),
        init.tau_d,
        init.sigma_d,
    ];
    let bounds = [
        Bound::Free,
        Bound::Positive,
        Bound::Positive,
        Bound::Positive,
        Bound::Free,
        Bound::Positive,
        Bound::Positive,
        Bound::Positive,
    ];
    let obj = |x: &[f64]| -early_loglik(&t_obs, &m_obs, window, m_min, &unpack(x));
    let r = minimize_with(obj, &x0, &bounds, &MinimizeOptions::with_tol(1e-10))?;
    let loglik = -r.f_opt;
    let param_names = names(&["a", "b", "c", "p", "mu_inf", "mu_gap", "tau_d", "sigma_d"]);
    Ok(FitResult {
        params: unpack(&r.x_opt),
        loglik,
        aic: aic(loglik, param_names.len()),
        se: r.standard_errors(),
        param_names,
        window,
        n_events: t_obs.len(),
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval: r.n_eval,
    })
}
