//! Temporal ETAS model: conditional intensity, log-likelihood, maximum
//! likelihood fitting, thinning simulation and residual diagnostics.
//!
//! λ(t) = μ + Σ_{tᵢ<t} K·e^{α(Mᵢ−M₀)}/(t − tᵢ + c)^p
//!
//! History sums are exact (no truncation). Events before the target window
//! start S act only as triggers.

mod kernel;
mod residuals;
mod simulate;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Event};
use crate::error::{invalid, Error, Result};
use crate::fit::{aic, names, FitResult};
use crate::numerics::{minimize_bfgs, minimize_newton, power_law_integral, power_law_integral_derivs, Bound, MinimizeOptions};

pub use residuals::{
    detect_anomaly, transform_times, AnomalyPoint, AnomalyReport, AnomalyVerdict, BandExit,
    ResidualSeries,
};
pub use simulate::{branching_ratio, branching_ratio_horizon, simulate_etas, MAX_SIMULATED_EVENTS};

/// Parameters of the temporal ETAS intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    /// Background rate (events/day).
    pub mu_bg: f64,
    pub k_prod: f64,
    /// Omori c (days).
    pub c_off: f64,
    /// Magnitude sensitivity α (1/magnitude).
    pub alpha_m: f64,
    pub p_exp: f64,
    /// Reference magnitude M₀.
    pub m_ref: f64,
}

impl EtasParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_bg > 0.0
            && self.k_prod > 0.0
            && self.c_off > 0.0
            && self.p_exp > 0.0
            && self.alpha_m >= 0.0
            && self.m_ref.is_finite();
        if !ok {
            return Err(invalid(format!("invalid ETAS parameters {self:?}")));
        }
        Ok(())
    }

    /// Parameter vector (μ, K, c, α, p).
    pub fn to_vec(&self) -> [f64; 5] {
        [self.mu_bg, self.k_prod, self.c_off, self.alpha_m, self.p_exp]
    }

    pub fn from_slice(x: &[f64], m_ref: f64) -> Self {
        Self {
            mu_bg: x[0],
            k_prod: x[1],
            c_off: x[2],
            alpha_m: x[3],
            p_exp: x[4],
            m_ref,
        }
    }

    /// Productivity weight K·e^{α(M − M₀)} of an event of magnitude `mag`.
    pub fn productivity(&self, mag: f64) -> f64 {
        self.k_prod * (self.alpha_m * (mag - self.m_ref)).exp()
    }
}

pub const ETAS_PARAM_NAMES: [&str; 5] = ["mu", "K", "c", "alpha", "p"];

fn check_sorted(events: &[Event]) -> Result<()> {
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(invalid("history is not sorted by time"));
    }
    Ok(())
}

/// Conditional intensity at `t` given `history` (events with tᵢ < t count).
pub fn etas_intensity(t: f64, history: &[Event], params: &EtasParams) -> Result<f64> {
    check_sorted(history)?;
    if let Some(last) = history.last() {
        if last.t > t {
            return Err(invalid(format!("history event at {} is later than t = {t}", last.t)));
        }
    }
    let sum: f64 = history
        .iter()
        .filter(|e| e.t < t)
        .map(|e| (params.alpha_m * (e.mag - params.m_ref)).exp() * (t - e.t + params.c_off).powf(-params.p_exp))
        .sum();
    Ok(params.mu_bg + params.k_prod * sum)
}

/// Compensator Λ(S, T) = ∫_S^T λ(t) dt in closed form.
pub fn etas_compensator(catalog: &Catalog, params: &EtasParams, window: (f64, f64)) -> f64 {
    let (s, t_end) = window;
    let mut total = params.mu_bg * (t_end - s);
    for e in catalog.events.iter().filter(|e| e.t < t_end) {
        let a = (s - e.t).max(0.0);
        total += params.productivity(e.mag) * power_law_integral(a, t_end - e.t, params.c_off, params.p_exp);
    }
    total
}

/// Catalog arrays prepared for repeated likelihood evaluation.
pub(crate) struct Prepared {
    pub times: Vec<f64>,
    /// Magnitudes relative to M₀.
    pub rel_mag: Vec<f64>,
    /// (tᵢ, number of strictly earlier events) for each target event.
    pub targets: Vec<(f64, usize)>,
    pub window: (f64, f64),
}

impl Prepared {
    pub fn new(catalog: &Catalog, m_ref: f64, window: (f64, f64)) -> Result<Self> {
        let (s, t_end) = window;
        if !(s < t_end) || !s.is_finite() || !t_end.is_finite() {
            return Err(invalid(format!("window ({s}, {t_end}) must satisfy S < T")));
        }
        check_sorted(&catalog.events)?;
        let used: Vec<&Event> = catalog.events.iter().filter(|e| e.t <= t_end).collect();
        let times: Vec<f64> = used.iter().map(|e| e.t).collect();
        let rel_mag = used.iter().map(|e| e.mag - m_ref).collect();
        let targets = times
            .iter()
            .filter(|&&t| t > s)
            .map(|&t| (t, times.partition_point(|&u| u < t)))
            .collect();
        Ok(Self {
            times,
            rel_mag,
            targets,
            window,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    fn weights(&self, alpha: f64) -> Vec<f64> {
        self.rel_mag.iter().map(|m| (alpha * m).exp()).collect()
    }

    /// Negative log-likelihood at θ = (μ, K, c, α, p); `None` when λ ≤ 0 at an event.
    pub fn neg_loglik(&self, theta: &[f64]) -> Option<f64> {
        let [mu, k, c, alpha, p] = [theta[0], theta[1], theta[2], theta[3], theta[4]];
        let w = self.weights(alpha);
        let sums = kernel::all_values(&self.times, &w, &self.targets, c, p);
        let mut f = 0.0;
        for s in &sums {
            let lam = mu + k * s;
            if !(lam > 0.0) || !lam.is_finite() {
                return None;
            }
            f -= lam.ln();
        }
        let (s, t_end) = self.window;
        f += mu * (t_end - s);
        for (tj, wj) in self.times.iter().zip(&w) {
            let a = (s - tj).max(0.0);
            f += k * wj * power_law_integral(a, t_end - tj, c, p);
        }
        f.is_finite().then_some(f)
    }

    /// Negative log-likelihood with analytic gradient and Hessian in (μ, K, c, α, p).
    pub fn neg_loglik_second_order(&self, theta: &[f64]) -> Option<(f64, Vec<f64>, DMatrix<f64>)> {
        use kernel::idx::*;
        let [mu, k, c, alpha, p] = [theta[0], theta[1], theta[2], theta[3], theta[4]];
        let w = self.weights(alpha);
        let sums = kernel::all_sums(&self.times, &w, &self.rel_mag, &self.targets, c, p);
        let mut f = 0.0;
        let mut g = [0.0; 5];
        let mut h = [[0.0; 5]; 5];
        for s in &sums {
            let lam = mu + k * s[G];
            if !(lam > 0.0) || !lam.is_finite() {
                return None;
            }
            let inv = 1.0 / lam;
            let d = [1.0, s[G], -p * k * s[G_INV], k * s[G_M], -k * s[G_L]];
            let mut d2 = [[0.0; 5]; 5];
            d2[1][2] = -p * s[G_INV];
            d2[1][3] = s[G_M];
            d2[1][4] = -s[G_L];
            d2[2][2] = p * (p + 1.0) * k * s[G_INV2];
            d2[2][3] = -p * k * s[G_M_INV];
            d2[2][4] = -k * s[G_INV] + p * k * s[G_L_INV];
            d2[3][3] = k * s[G_M2];
            d2[3][4] = -k * s[G_ML];
            d2[4][4] = k * s[G_L2];
            f -= lam.ln();
            for a in 0..5 {
                g[a] -= d[a] * inv;
                for b in a..5 {
                    h[a][b] += -d2[a][b] * inv + d[a] * d[b] * inv * inv;
                }
            }
        }
        let (s, t_end) = self.window;
        f += mu * (t_end - s);
        g[0] += t_end - s;
        for ((tj, wj), mj) in self.times.iter().zip(&w).zip(&self.rel_mag) {
            let a = (s - tj).max(0.0);
            let pi = power_law_integral_derivs(a, t_end - tj, c, p);
            let kw = k * wj;
            f += kw * pi.value;
            g[1] += wj * pi.value;
            g[2] += kw * pi.d_c;
            g[3] += kw * mj * pi.value;
            g[4] += kw * pi.d_p;
            h[1][2] += wj * pi.d_c;
            h[1][3] += wj * mj * pi.value;
            h[1][4] += wj * pi.d_p;
            h[2][2] += kw * pi.d_cc;
            h[2][3] += kw * mj * pi.d_c;
            h[2][4] += kw * pi.d_cp;
            h[3][3] += kw * mj * mj * pi.value;
            h[3][4] += kw * mj * pi.d_p;
            h[4][4] += kw * pi.d_pp;
        }
        let mut hess = DMatrix::zeros(5, 5);
        for a in 0..5 {
            for b in a..5 {
                hess[(a, b)] = h[a][b];
                hess[(b, a)] = h[a][b];
            }
        }
        f.is_finite().then_some((f, g.to_vec(), hess))
    }
}

/// Log-likelihood of the events in (S, T]; earlier events act as history.
pub fn etas_loglik(catalog: &Catalog, params: &EtasParams, window: (f64, f64)) -> Result<f64> {
    params.validate()?;
    let prep = Prepared::new(catalog, params.m_ref, window)?;
    match prep.neg_loglik(&params.to_vec()) {
        Some(f) => Ok(-f),
        None => {
            let t = first_nonpositive(&prep, params).unwrap_or(window.0);
            Err(Error::NonPositiveIntensity { t })
        }
    }
}

fn first_nonpositive(prep: &Prepared, params: &EtasParams) -> Option<f64> {
    let w = prep.weights(params.alpha_m);
    let sums = kernel::all_values(&prep.times, &w, &prep.targets, params.c_off, params.p_exp);
    prep.targets
        .iter()
        .zip(&sums)
        .find(|(_, s)| !(params.mu_bg + params.k_prod * *s > 0.0))
        .map(|((t, _), _)| *t)
}

/// Maximum-likelihood fit of (μ, K, c, α, p) on the window (S, T].
///
/// Damped Newton iterations on log-parameters with the analytic Hessian;
/// falls back to BFGS when Newton does not converge.
pub fn fit_etas(catalog: &Catalog, window: (f64, f64), init: &EtasParams) -> Result<FitResult<EtasParams>> {
    init.validate()?;
    if !(init.alpha_m > 0.0) {
        return Err(invalid("initial alpha must be positive for the log-parameter search"));
    }
    let prep = Prepared::new(catalog, init.m_ref, window)?;
    let n = prep.n_targets();
    if n < 50 {
        return Err(invalid(format!("need at least 50 events in the window, found {n}")));
    }
    let bounds = [Bound::Positive; 5];
    let opts = MinimizeOptions {
        tol: 1e-11,
        ..MinimizeOptions::default()
    };
    let mut r = minimize_newton(|x| prep.neg_loglik_second_order(x), &init.to_vec(), &bounds, &opts)?;
    let mut n_eval = r.n_eval;
    if !r.converged {
        let b = minimize_bfgs(
            |x| prep.neg_loglik_second_order(x).map(|(f, g, _)| (f, g)),
            &r.x_opt,
            &bounds,
            &opts,
        )?;
        n_eval += b.n_eval;
        if b.f_opt <= r.f_opt {
            let polish = minimize_newton(|x| prep.neg_loglik_second_order(x), &b.x_opt, &bounds, &opts)?;
            n_eval += polish.n_eval;
            r = if polish.f_opt <= b.f_opt { polish } else { b };
        }
    }
    let loglik = -r.f_opt;
    Ok(FitResult {
        params: EtasParams::from_slice(&r.x_opt, init.m_ref),
        param_names: names(&ETAS_PARAM_NAMES),
        loglik,
        aic: aic(loglik, 5),
        se: r.standard_errors(),
        window,
        n_events: n,
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval,
    })
}

/// Nested stationary Poisson model (K = 0) on the same window; the single
/// parameter is μ.
pub fn fit_poisson(catalog: &Catalog, window: (f64, f64)) -> Result<FitResult<f64>> {
    let (s, t_end) = window;
    if !(s < t_end) {
        return Err(invalid("window must satisfy S < T"));
    }
    let n = catalog.events.iter().filter(|e| e.t > s && e.t <= t_end).count();
    if n == 0 {
        return Err(Error::EmptyCatalog);
    }
    let len = t_end - s;
    let mu = n as f64 / len;
    let loglik = n as f64 * mu.ln() - mu * len;
    Ok(FitResult {
        params: mu,
        param_names: names(&["mu"]),
        loglik,
        aic: aic(loglik, 1),
        se: vec![mu / (n as f64).sqrt()],
        window,
        n_events: n,
        converged: true,
        hessian_pd: true,
        n_eval: 1,
    })
}

/// Expected number of events with t in (S, T] given the observed history.
pub fn expected_count(catalog: &Catalog, params: &EtasParams, window: (f64, f64)) -> f64 {
    etas_compensator(catalog, params, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate_panels;

    fn params() -> EtasParams {
        EtasParams { mu_bg: 0.1, k_prod: 0.02, c_off: 0.01, alpha_m: 1.0, p_exp: 1.2, m_ref: 4.0 }
    }

    fn small_catalog() -> Catalog {
        let ev: Vec<Event> = (0..60)
            .map(|i| {
                let t = i as f64 * 1.7 + (i as f64 * 0.91).sin().abs() * 1.3;
                Event::at(t, 4.0 + (i % 5) as f64 * 0.4)
            })
            .collect();
        Catalog::new(ev)
    }

    #[test]
    fn intensity_examples() {
        let p = params();
        assert_eq!(etas_intensity(5.0, &[], &p).unwrap(), 0.1);
        let one = [Event::at(0.0, 4.0)];
        let v = etas_intensity(1.0, &one, &p).unwrap();
        assert!((v - (0.1 + 0.02 * 1.01f64.powf(-1.2))).abs() < 1e-15);
        assert!((v - 0.11976).abs() < 5e-6);
        let big = [Event::at(0.0, 5.0)];
        let vb = etas_intensity(1.0, &big, &p).unwrap() - 0.1;
        assert!((vb - std::f64::consts::E * 0.02 * 1.01f64.powf(-1.2)).abs() < 1e-15);
        let unsorted = [Event::at(1.0, 4.0), Event::at(0.0, 4.0)];
        assert!(etas_intensity(2.0, &unsorted, &p).is_err());
        assert!(etas_intensity(0.5, &one[..], &p).is_ok());
        assert!(etas_intensity(-0.5, &one[..], &p).is_err());
    }

    #[test]
    fn poisson_limit_of_loglik() {
        let cat = small_catalog();
        let mut p = params();
        p.k_prod = 1e-300;
        let (s, t) = (10.0, 90.0);
        let n = cat.events.iter().filter(|e| e.t > s && e.t <= t).count() as f64;
        let ll = etas_loglik(&cat, &p, (s, t)).unwrap();
        assert!((ll - (n * 0.1f64.ln() - 0.1 * (t - s))).abs() < 1e-9);
    }

    #[test]
    fn compensator_matches_quadrature() {
        let cat = small_catalog();
        let p = params();
        let (s, t) = (10.0, 90.0);
        let closed = etas_compensator(&cat, &p, (s, t));
        let mut knots: Vec<f64> = vec![s];
        knots.extend(cat.events.iter().map(|e| e.t).filter(|&u| u > s && u < t));
        knots.push(t);
        let mut quad = 0.0;
        for w in knots.windows(2) {
            quad += integrate_panels(|u| {
                let k = cat.events.partition_point(|e| e.t < u);
                etas_intensity(u, &cat.events[..k], &p).unwrap()
            }, w[0], w[1], 1e-13, 4).unwrap();
        }
        assert!(((closed - quad) / quad).abs() < 1e-10);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let cat = small_catalog();
        let prep = Prepared::new(&cat, 4.0, (10.0, 100.0)).unwrap();
        let theta = [0.3, 0.05, 0.02, 0.8, 1.15];
        let (f, g, h) = prep.neg_loglik_second_order(&theta).unwrap();
        assert!((f - prep.neg_loglik(&theta).unwrap()).abs() < 1e-10 * f.abs());
        for a in 0..5 {
            let step = 1e-6 * theta[a];
            let mut up = theta;
            up[a] += step;
            let mut dn = theta;
            dn[a] -= step;
            let fd = (prep.neg_loglik(&up).unwrap() - prep.neg_loglik(&dn).unwrap()) / (2.0 * step);
            assert!((fd - g[a]).abs() < 1e-5 * (1.0 + g[a].abs()), "grad {a}: {fd} vs {}", g[a]);
            let (_, gu, _) = prep.neg_loglik_second_order(&up).unwrap();
            let (_, gd, _) = prep.neg_loglik_second_order(&dn).unwrap();
            for b in 0..5 {
                let fd2 = (gu[b] - gd[b]) / (2.0 * step);
                assert!((fd2 - h[(a, b)]).abs() < 1e-4 * (1.0 + h[(a, b)].abs()), "hess {a},{b}: {fd2} vs {}", h[(a, b)]);
            }
        }
    }
}
