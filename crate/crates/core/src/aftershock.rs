//! Omori–Utsu aftershock decay and Reasenberg–Jones probability forecasts.
//!
//! Times are days since the mainshock. All cumulative counts use the closed
//! form of ∫(t + c)^(−p) dt, with the logarithmic branch at p = 1.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

use crate::error::{invalid, Error, Result};
use crate::fit::{aic, names, FitResult};
use crate::numerics::{minimize_with, power_law_integral, Bound, MinimizeOptions};

/// Parameters of the Omori–Utsu rate K/(t + c)^p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmoriParams {
    pub k_prod: f64,
    pub c_off: f64,
    pub p_exp: f64,
}

impl OmoriParams {
    pub fn new(k_prod: f64, c_off: f64, p_exp: f64) -> Result<Self> {
        let p = Self {
            k_prod,
            c_off,
            p_exp,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_prod > 0.0 && self.c_off > 0.0 && self.p_exp > 0.0) {
            return Err(invalid(format!(
                "Omori parameters must be positive (K={}, c={}, p={})",
                self.k_prod, self.c_off, self.p_exp
            )));
        }
        Ok(())
    }
}

/// K/(t + c)^p.
pub fn omori_rate(t: f64, params: &OmoriParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time {t} precedes the mainshock")));
    }
    Ok(params.k_prod * (t + params.c_off).powf(-params.p_exp))
}

/// Expected number of events in (s, t].
pub fn omori_expected_count(params: &OmoriParams, s: f64, t: f64) -> f64 {
    params.k_prod * power_law_integral(s, t, params.c_off, params.p_exp)
}

/// Log-likelihood of occurrence times in the window (S, T].
pub fn omori_loglik(times: &[f64], params: &OmoriParams, window: (f64, f64)) -> f64 {
    let (s, t_end) = window;
    let (k, c, p) = (params.k_prod, params.c_off, params.p_exp);
    let ln_k = k.ln();
    let sum: f64 = times
        .iter()
        .filter(|&&t| t > s && t <= t_end)
        .map(|&t| ln_k - p * (t + c).ln())
        .sum();
    sum - omori_expected_count(params, s, t_end)
}

fn in_window(times: &[f64], window: (f64, f64)) -> Vec<f64> {
    times
        .iter()
        .copied()
        .filter(|&t| t > window.0 && t <= window.1)
        .collect()
}

/// Maximum-likelihood Omori–Utsu fit on (S, T].
pub fn fit_omori(times: &[f64], window: (f64, f64)) -> Result<FitResult<OmoriParams>> {
    fit_omori_inner(times, window, None)
}

/// Fit of (K, c) with p held fixed.
pub fn fit_omori_fixed_p(times: &[f64], window: (f64, f64), p: f64) -> Result<FitResult<OmoriParams>> {
    if !(p > 0.0) {
        return Err(invalid("p must be positive"));
    }
    fit_omori_inner(times, window, Some(p))
}

fn fit_omori_inner(
    times: &[f64],
    window: (f64, f64),
    fixed_p: Option<f64>,
) -> Result<FitResult<OmoriParams>> {
    let (s, t_end) = window;
    if !(s >= 0.0 && s < t_end) {
        return Err(invalid(format!("window ({s}, {t_end}) must satisfy 0 <= S < T")));
    }
    let obs = in_window(times, window);
    if obs.len() < 10 {
        return Err(invalid(format!(
            "at least 10 events are required in the window, found {}",
            obs.len()
        )));
    }
    let (lo, hi) = obs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("all events occur at one instant".into()));
    }
    let n = obs.len() as f64;

    // Start from the best profile point over a coarse (c, p) grid.
    let p_grid: Vec<f64> = match fixed_p {
        Some(p) => vec![p],
        None => vec![0.8, 1.0, 1.2, 1.5],
    };
    let scale = t_end - s;
    let mut start = (f64::NEG_INFINITY, OmoriParams { k_prod: 1.0, c_off: 1.0, p_exp: 1.0 });
    for &p in &p_grid {
        for &cf in &[1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
            let c = cf * scale;
            let k = n / power_law_integral(s, t_end, c, p);
            let cand = OmoriParams { k_prod: k, c_off: c, p_exp: p };
            let ll = omori_loglik(&obs, &cand, window);
            if ll > start.0 {
                start = (ll, cand);
            }
        }
    }
    let init = start.1;

    let opts = MinimizeOptions::with_tol(1e-12);
    let result = match fixed_p {
        None => {
            let obj = |x: &[f64]| {
                -omori_loglik(&obs, &OmoriParams { k_prod: x[0], c_off: x[1], p_exp: x[2] }, window)
            };
            let r = minimize_with(
                obj,
                &[init.k_prod, init.c_off, init.p_exp],
                &[Bound::Positive; 3],
                &opts,
            )?;
            let params = OmoriParams { k_prod: r.x_opt[0], c_off: r.x_opt[1], p_exp: r.x_opt[2] };
            (params, r, names(&["K", "c", "p"]))
        }
        Some(p) => {
            let obj = |x: &[f64]| {
                -omori_loglik(&obs, &OmoriParams { k_prod: x[0], c_off: x[1], p_exp: p }, window)
            };
            let r = minimize_with(obj, &[init.k_prod, init.c_off], &[Bound::Positive; 2], &opts)?;
            let params = OmoriParams { k_prod: r.x_opt[0], c_off: r.x_opt[1], p_exp: p };
            (params, r, names(&["K", "c"]))
        }
    };
    let (params, r, param_names) = result;
    let loglik = -r.f_opt;
    Ok(FitResult {
        params,
        loglik,
        aic: aic(loglik, param_names.len()),
        se: r.standard_errors(),
        param_names,
        window,
        n_events: obs.len(),
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval: r.n_eval,
    })
}

/// ∫₁ʸ u^(−p) du·(1 − p) = y^(1−p) − 1 scaled to stay finite at p = 1.
fn antiderivative(y: f64, p: f64) -> f64 {
    let q = 1.0 - p;
    let l = y.ln();
    if (q * l).abs() < 1e-8 {
        l * (1.0 + 0.5 * q * l)
    } else {
        (q * l).exp_m1() / q
    }
}

/// Inverse of y ↦ antiderivative(y, p); `None` when the value is unreachable.
fn inverse_antiderivative(v: f64, p: f64) -> Option<f64> {
    let q = 1.0 - p;
    if (q * v).abs() < 1e-12 {
        return Some(v.exp());
    }
    let arg = q * v;
    if arg <= -1.0 {
        return None;
    }
    Some((arg.ln_1p() / q).exp())
}

/// Simulates Omori–Utsu occurrence times on (S, T] by inverse time rescaling
/// of a unit-rate Poisson stream.
pub fn simulate_omori<R: Rng + ?Sized>(params: &OmoriParams, window: (f64, f64), rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    let (s, t_end) = window;
    if !(s >= 0.0 && s < t_end) {
        return Err(invalid("window must satisfy 0 <= S < T"));
    }
    let (k, c, p) = (params.k_prod, params.c_off, params.p_exp);
    let total = omori_expected_count(params, s, t_end);
    let base = antiderivative(s + c, p);
    let mut out = Vec::new();
    let mut u = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        u += e;
        if u >= total {
            break;
        }
        match inverse_antiderivative(base + u / k, p) {
            Some(y) => {
                let t = (y - c).clamp(s, t_end);
                out.push(t);
            }
            None => break,
        }
    }
    Ok(out)
}

/// Parameters of the joint time–magnitude aftershock intensity
/// 10^(a + b(M₀ − M))/(t + c)^p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RjParams {
    pub a_rj: f64,
    pub b_rj: f64,
    pub c_rj: f64,
    pub p_rj: f64,
    /// Mainshock magnitude.
    pub m0: f64,
}

impl RjParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_rj > 0.0 && self.c_rj > 0.0) {
            return Err(invalid("b and c must be positive"));
        }
        if !self.a_rj.is_finite() || !self.p_rj.is_finite() || !self.m0.is_finite() {
            return Err(invalid("a, p and M0 must be finite"));
        }
        Ok(())
    }

    /// Equivalent Omori–Utsu parameters for events with magnitude ≥ `mc`.
    pub fn omori_above(&self, mc: f64) -> OmoriParams {
        OmoriParams {
            k_prod: 10f64.powf(self.a_rj + self.b_rj * (self.m0 - mc)) / (self.b_rj * LN_10),
            c_off: self.c_rj,
            p_exp: self.p_rj,
        }
    }
}

/// Generic (b, c, p) used for early forecasts when only `a` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RjDefaults {
    pub b: f64,
    pub c: f64,
    pub p: f64,
}

/// 10^(a + b(M₀ − m))/(t + c)^p.
pub fn rj_intensity(t: f64, m: f64, params: &RjParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time {t} precedes the mainshock")));
    }
    Ok(10f64.powf(params.a_rj + params.b_rj * (params.m0 - m)) * (t + params.c_rj).powf(-params.p_rj))
}

/// Expected number of events with magnitude ≥ `m_thresh` in (t1, t2].
pub fn rj_expected_count(params: &RjParams, t_window: (f64, f64), m_thresh: f64) -> f64 {
    let o = params.omori_above(m_thresh);
    omori_expected_count(&o, t_window.0, t_window.1)
}

/// Expected count and probability of at least one qualifying aftershock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AftershockForecast {
    pub expected_count: f64,
    pub probability: f64,
}

/// Probability of one or more events with magnitude ≥ `m_thresh` in (t1, t2].
pub fn forecast_probability(
    params: &RjParams,
    t_window: (f64, f64),
    m_thresh: f64,
) -> Result<AftershockForecast> {
    params.validate()?;
    let (t1, t2) = t_window;
    if !(t1 >= 0.0 && t1 < t2) {
        return Err(invalid(format!("forecast window ({t1}, {t2}) must satisfy 0 <= t1 < t2")));
    }
    let n = rj_expected_count(params, t_window, m_thresh);
    Ok(AftershockForecast {
        expected_count: n,
        probability: -(-n).exp_m1(),
    })
}

/// Maximum-likelihood `a` with (b, c, p) held at `defaults`, from events
/// with magnitude ≥ `mc` in (S, T].
pub fn fit_rj_productivity(
    times: &[f64],
    mags: &[f64],
    window: (f64, f64),
    mc: f64,
    m0: f64,
    defaults: &RjDefaults,
) -> Result<RjParams> {
    if times.len() != mags.len() {
        return Err(invalid("times and magnitudes differ in length"));
    }
    let n = times
        .iter()
        .zip(mags)
        .filter(|(&t, &m)| t > window.0 && t <= window.1 && m >= mc)
        .count();
    if n == 0 {
        return Err(Error::Degenerate("no events above the cutoff in the window".into()));
    }
    let unit = RjParams {
        a_rj: 0.0,
        b_rj: defaults.b,
        c_rj: defaults.c,
        p_rj: defaults.p,
        m0,
    };
    unit.validate()?;
    let per_unit = rj_expected_count(&unit, window, mc);
    Ok(RjParams {
        a_rj: (n as f64 / per_unit).log10(),
        ..unit
    })
}

/// Simulates (time, magnitude) pairs with magnitude ≥ `m_min` in (t1, t2].
pub fn simulate_rj<R: Rng + ?Sized>(
    params: &RjParams,
    t_window: (f64, f64),
    m_min: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let o = params.omori_above(m_min);
    let times = simulate_omori(&o, t_window, rng)?;
    let beta = params.b_rj * LN_10;
    Ok(times
        .into_iter()
        .map(|t| {
            let e: f64 = Exp1.sample(rng);
            (t, m_min + e / beta)
        })
        .collect())
}
