//! Precursor probability combination and covariate point-process models.
//!
//! The intensity family is
//!
//! λ(t) = μ + Σⱼ aⱼ(t/τ)ʲ + Σₖ {c₂ₖ₋₁ cos(2πkt/T₀) + c₂ₖ sin(2πkt/T₀)}
//!        + Σ_{tᵢ<t} G e^{−γ(t − tᵢ)} + Σ_{s≤t} A e^{−δ(t − s)} ξₛᵃ Δs
//!
//! where τ is a fixed time scale for the trend polynomial and the covariate
//! integral is a rectangle rule at the covariate's sampling step Δs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{aic, FitResult};
use crate::numerics::{minimize_with, Bound, MinimizeOptions};

/// Annual period in days.
pub const ANNUAL_PERIOD_DAYS: f64 = 365.24;

/// Base probability and per-anomaly conditional probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecursorSet {
    pub p0: f64,
    pub conditionals: Vec<f64>,
}

impl PrecursorSet {
    pub fn new(p0: f64, conditionals: Vec<f64>) -> Result<Self> {
        let s = Self { p0, conditionals };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditionals.is_empty() {
            return Err(invalid("at least one conditional probability is required"));
        }
        for &p in std::iter::once(&self.p0).chain(&self.conditionals) {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("probability {p} must lie strictly between 0 and 1")));
            }
        }
        Ok(())
    }
}

/// P = [1 + Π(1/Pₖ − 1)/(1/P₀ − 1)^{N−1}]⁻¹ for conditionally independent
/// anomalies.
pub fn combine_exact(set: &PrecursorSet) -> Result<f64> {
    set.validate()?;
    // Work with log odds to stay accurate for many precursors.
    let lo = |p: f64| ((1.0 - p) / p).ln();
    let n = set.conditionals.len() as f64;
    let s: f64 = set.conditionals.iter().map(|&p| lo(p)).sum::<f64>() - (n - 1.0) * lo(set.p0);
    Ok(1.0 / (1.0 + s.exp()))
}

/// Product-of-gains approximation and the individual gains Pₖ/P₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxCombination {
    pub probability: f64,
    pub gains: Vec<f64>,
    /// Product of the gains.
    pub total_gain: f64,
}

/// P ≈ P₀ Π (Pₖ/P₀).
pub fn combine_approx(set: &PrecursorSet) -> Result<ApproxCombination> {
    set.validate()?;
    let gains: Vec<f64> = set.conditionals.iter().map(|p| p / set.p0).collect();
    let log_gain: f64 = gains.iter().map(|g| g.ln()).sum();
    Ok(ApproxCombination {
        probability: set.p0 * log_gain.exp(),
        total_gain: log_gain.exp(),
        gains,
    })
}

/// Exponential response kernel amplitude·e^{−decay·s}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpKernel {
    pub amplitude: f64,
    pub decay: f64,
}

/// Fourier terms with period T₀; `coeffs` holds (c₁, c₂, …, c₂ₖ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fourier {
    pub period: f64,
    pub coeffs: Vec<f64>,
}

impl Fourier {
    pub fn harmonics(&self) -> usize {
        self.coeffs.len() / 2
    }

    fn value(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU / self.period;
        self.coeffs
            .chunks_exact(2)
            .enumerate()
            .map(|(k, c)| {
                let x = (k + 1) as f64 * w * t;
                c[0] * x.cos() + c[1] * x.sin()
            })
            .sum()
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let w = std::f64::consts::TAU / self.period;
        self.coeffs
            .chunks_exact(2)
            .enumerate()
            .map(|(k, c)| {
                let kw = (k + 1) as f64 * w;
                (c[0] * ((kw * b).sin() - (kw * a).sin()) - c[1] * ((kw * b).cos() - (kw * a).cos())) / kw
            })
            .sum()
    }
}

/// Intensity model of the covariate/periodicity family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub mu0: f64,
    /// a₁, …, a_J.
    pub trend: Vec<f64>,
    /// Time scale τ of the trend polynomial (days).
    pub trend_scale: f64,
    /// Clustering kernel g.
    pub self_kernel: Option<ExpKernel>,
    /// Covariate response kernel h.
    pub transfer_kernel: Option<ExpKernel>,
    /// Exponent a of f(ξ) = ξᵃ.
    pub covariate_power: f64,
    pub fourier: Option<Fourier>,
}

impl CovariateModel {
    /// Stationary Poisson model with rate `mu0`.
    pub fn poisson(mu0: f64) -> Self {
        Self {
            mu0,
            trend: Vec::new(),
            trend_scale: 1.0,
            self_kernel: None,
            transfer_kernel: None,
            covariate_power: 1.0,
            fourier: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in self.self_kernel.iter().chain(&self.transfer_kernel) {
            if !(k.decay > 0.0) || !(k.amplitude >= 0.0) {
                return Err(invalid(format!("kernel {k:?} needs a positive decay and non-negative amplitude")));
            }
        }
        if !(self.trend_scale > 0.0) || !self.mu0.is_finite() {
            return Err(invalid("trend scale must be positive and mu0 finite"));
        }
        if let Some(f) = &self.fourier {
            if !(f.period > 0.0) || f.coeffs.len() % 2 != 0 {
                return Err(invalid("Fourier block needs a positive period and an even number of coefficients"));
            }
        }
        Ok(())
    }

    /// μ + trend + Fourier terms at `t`.
    pub fn baseline(&self, t: f64) -> f64 {
        let x = t / self.trend_scale;
        let mut v = self.mu0;
        let mut pw = 1.0;
        for a in &self.trend {
            pw *= x;
            v += a * pw;
        }
        if let Some(f) = &self.fourier {
            v += f.value(t);
        }
        v
    }

    fn baseline_integral(&self, a: f64, b: f64) -> f64 {
        let tau = self.trend_scale;
        let mut v = self.mu0 * (b - a);
        for (j, c) in self.trend.iter().enumerate() {
            let e = (j + 2) as i32;
            v += c * tau / e as f64 * ((b / tau).powi(e) - (a / tau).powi(e));
        }
        if let Some(f) = &self.fourier {
            v += f.integral(a, b);
        }
        v
    }

    /// Upper bound of the baseline on [a, b].
    fn baseline_bound(&self, a: f64, b: f64) -> f64 {
        let x = (a.abs().max(b.abs())) / self.trend_scale;
        let mut v = self.mu0.abs();
        let mut pw = 1.0;
        for c in &self.trend {
            pw *= x;
            v += c.abs() * pw;
        }
        if let Some(f) = &self.fourier {
            v += f.coeffs.iter().map(|c| c.abs()).sum::<f64>();
        }
        v
    }
}

/// Regularly sampled covariate ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSeries {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    /// Sampling step Δs used by the rectangle rule.
    pub step: f64,
}

impl CovariateSeries {
    pub fn new(t: Vec<f64>, value: Vec<f64>, step: f64) -> Result<Self> {
        if t.len() != value.len() || t.is_empty() {
            return Err(invalid("covariate times and values must be non-empty and of equal length"));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("covariate times must be strictly increasing"));
        }
        if value.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("covariate values must be non-negative"));
        }
        if !(step > 0.0) {
            return Err(invalid("sampling step must be positive"));
        }
        Ok(Self { t, value, step })
    }

    /// Samples at t₀, t₀ + step, ….
    pub fn regular(t0: f64, step: f64, value: Vec<f64>) -> Result<Self> {
        let t = (0..value.len()).map(|i| t0 + step * i as f64).collect();
        Self::new(t, value, step)
    }

    /// Step inferred as the median sample spacing.
    pub fn from_pairs(t: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(invalid("at least two samples are needed to infer the sampling step"));
        }
        let mut d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        let step = d[d.len() / 2];
        Self::new(t, value, step)
    }

    /// Treats another event series as the input, so the transfer term
    /// becomes Σ h(t − t_j) over its events. A zero sample at `until`
    /// marks the series as covering the time up to there.
    pub fn from_events(times: &[f64], until: f64) -> Result<Self> {
        let mut t: Vec<f64> = times.iter().copied().filter(|&x| x < until).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        let mut value = vec![1.0; t.len()];
        t.push(until);
        value.push(0.0);
        Self::new(t, value, 1.0)
    }

    /// Reads `t_days, value` rows.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let (mut t, mut v) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| invalid(format!("covariate row {}: {e}", i + 2)))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid(format!("covariate row {}: bad column {}", i + 2, k + 1)))
            };
            t.push(num(0)?);
            v.push(num(1)?);
        }
        Self::from_pairs(t, v)
    }
}

/// Σ_{s≤t} e^{−δ(t−s)} wₛ at each sorted query time.
fn exp_filter_inclusive(src_t: &[f64], src_w: &[f64], decay: f64, queries: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(queries.len());
    let (mut state, mut cur, mut k) = (0.0, f64::NEG_INFINITY, 0);
    for &q in queries {
        while k < src_t.len() && src_t[k] <= q {
            state = if cur.is_finite() { state * (-decay * (src_t[k] - cur)).exp() } else { 0.0 } + src_w[k];
            cur = src_t[k];
            k += 1;
        }
        out.push(if cur.is_finite() { state * (-decay * (q - cur)).exp() } else { 0.0 });
    }
    out
}

/// Σ_{tⱼ<tᵢ} e^{−γ(tᵢ−tⱼ)} for each event of a sorted series.
fn exp_self_excitation(times: &[f64], decay: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut state = 0.0;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            let prev = times[i - 1];
            state = (state + if prev < t { 1.0 } else { 0.0 }) * (-decay * (t - prev)).exp();
            // Tied events do not excite each other.
            if prev == t {
                state = out[i - 1];
            }
        }
        out.push(state);
    }
    out
}

fn transfer_weights(cov: &CovariateSeries, power: f64) -> Vec<f64> {
    cov.value.iter().map(|v| if *v == 0.0 { 0.0 } else { v.powf(power) * cov.step }).collect()
}

fn check_coverage(cov: &CovariateSeries, t: f64) -> Result<()> {
    let last = *cov.t.last().unwrap();
    if t > last + cov.step {
        return Err(invalid(format!("covariate series ends at {last} but intensity is requested at {t}")));
    }
    Ok(())
}

/// Conditional intensity at `t` given sorted event times and the covariate.
pub fn covariate_intensity(
    t: f64,
    events: &[f64],
    covariate: Option<&CovariateSeries>,
    model: &CovariateModel,
) -> Result<f64> {
    model.validate()?;
    let mut lam = model.baseline(t);
    if let Some(g) = &model.self_kernel {
        lam += g.amplitude * events.iter().filter(|&&u| u < t).map(|u| (-g.decay * (t - u)).exp()).sum::<f64>();
    }
    if let Some(h) = &model.transfer_kernel {
        let cov = covariate.ok_or_else(|| invalid("model has a transfer term but no covariate was given"))?;
        check_coverage(cov, t)?;
        let w = transfer_weights(cov, model.covariate_power);
        lam += h.amplitude
            * cov
                .t
                .iter()
                .zip(&w)
                .filter(|(s, _)| **s <= t)
                .map(|(s, w)| w * (-h.decay * (t - s)).exp())
                .sum::<f64>();
    }
    if lam < 0.0 {
        return Err(Error::NonPositiveIntensity { t });
    }
    Ok(lam)
}

/// Σ ln λ(tᵢ) − ∫_S^T λ for events in (S, T]; `None` when λ < 0 at an event
/// or the baseline turns negative on a check grid.
fn loglik_inner(events: &[f64], window: (f64, f64), cov: Option<&CovariateSeries>, m: &CovariateModel) -> Option<f64> {
    let (s, t_end) = window;
    let n_grid = 512;
    for i in 0..=n_grid {
        let t = s + (t_end - s) * i as f64 / n_grid as f64;
        if m.baseline(t) < 0.0 {
            return None;
        }
    }
    let hist_end = events.partition_point(|&u| u <= t_end);
    let events = &events[..hist_end];
    let first = events.partition_point(|&u| u <= s);
    let targets = &events[first..];
    let mut lam: Vec<f64> = targets.iter().map(|&t| m.baseline(t)).collect();
    let mut integral = m.baseline_integral(s, t_end);
    if let Some(g) = &m.self_kernel {
        let ex = exp_self_excitation(events, g.decay);
        for (l, e) in lam.iter_mut().zip(&ex[first..]) {
            *l += g.amplitude * e;
        }
        integral += events
            .iter()
            .map(|&u| g.amplitude / g.decay * ((-g.decay * (s - u).max(0.0)).exp() - (-g.decay * (t_end - u)).exp()))
            .sum::<f64>();
    }
    if let Some(h) = &m.transfer_kernel {
        let cov = cov?;
        let w = transfer_weights(cov, m.covariate_power);
        let tr = exp_filter_inclusive(&cov.t, &w, h.decay, targets);
        for (l, e) in lam.iter_mut().zip(&tr) {
            *l += h.amplitude * e;
        }
        integral += cov
            .t
            .iter()
            .zip(&w)
            .filter(|(u, _)| **u <= t_end)
            .map(|(&u, &wu)| h.amplitude * wu / h.decay * ((-h.decay * (s - u).max(0.0)).exp() - (-h.decay * (t_end - u)).exp()))
            .sum::<f64>();
    }
    let mut ll = -integral;
    for l in lam {
        if !(l > 0.0) {
            return None;
        }
        ll += l.ln();
    }
    ll.is_finite().then_some(ll)
}

/// Log-likelihood of the events in (S, T].
pub fn covariate_loglik(
    events: &[f64],
    window: (f64, f64),
    covariate: Option<&CovariateSeries>,
    model: &CovariateModel,
) -> Result<f64> {
    model.validate()?;
    if model.transfer_kernel.is_some() {
        let cov = covariate.ok_or_else(|| invalid("model has a transfer term but no covariate was given"))?;
        check_coverage(cov, window.1)?;
    }
    loglik_inner(events, window, covariate, model).ok_or(Error::NonPositiveIntensity { t: window.0 })
}

/// Which terms of the family are estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub trend_order: usize,
    pub self_kernel: bool,
    pub transfer: bool,
    /// Estimate the exponent a; otherwise it is held at `fixed_power`.
    pub fit_power: bool,
    pub fixed_power: f64,
    /// (period, harmonics) of the Fourier block.
    pub fourier: Option<(f64, usize)>,
}

impl Default for ModelFamily {
    fn default() -> Self {
        Self { trend_order: 0, self_kernel: false, transfer: false, fit_power: true, fixed_power: 1.0, fourier: None }
    }
}

impl ModelFamily {
    fn names(&self) -> Vec<String> {
        let mut v = vec!["mu".to_string()];
        v.extend((1..=self.trend_order).map(|j| format!("a{j}")));
        if let Some((_, k)) = self.fourier {
            v.extend((1..=2 * k).map(|j| format!("c{j}")));
        }
        if self.self_kernel {
            v.extend(["g_amplitude".into(), "g_decay".into()]);
        }
        if self.transfer {
            v.extend(["h_amplitude".into(), "h_decay".into()]);
            if self.fit_power {
                v.push("power".into());
            }
        }
        v
    }

    fn bounds(&self) -> Vec<Bound> {
        let mut b = vec![Bound::Positive];
        b.extend(std::iter::repeat_n(Bound::Free, self.trend_order));
        if let Some((_, k)) = self.fourier {
            b.extend(std::iter::repeat_n(Bound::Free, 2 * k));
        }
        if self.self_kernel {
            b.extend([Bound::Positive, Bound::Positive]);
        }
        if self.transfer {
            b.extend([Bound::Positive, Bound::Positive]);
            if self.fit_power {
                b.push(Bound::Interval(0.01, 5.0));
            }
        }
        b
    }

    fn unpack(&self, x: &[f64], trend_scale: f64) -> CovariateModel {
        let mut i = 1;
        let trend = x[i..i + self.trend_order].to_vec();
        i += self.trend_order;
        let fourier = self.fourier.map(|(period, k)| {
            let c = x[i..i + 2 * k].to_vec();
            i += 2 * k;
            Fourier { period, coeffs: c }
        });
        let self_kernel = self.self_kernel.then(|| {
            let k = ExpKernel { amplitude: x[i], decay: x[i + 1] };
            i += 2;
            k
        });
        let (transfer_kernel, covariate_power) = if self.transfer {
            let k = ExpKernel { amplitude: x[i], decay: x[i + 1] };
            i += 2;
            let a = if self.fit_power {
                let a = x[i];
                i += 1;
                a
            } else {
                self.fixed_power
            };
            (Some(k), a)
        } else {
            (None, self.fixed_power)
        };
        debug_assert_eq!(i, x.len());
        CovariateModel { mu0: x[0], trend, trend_scale, self_kernel, transfer_kernel, covariate_power, fourier }
    }
}

/// Minimum number of target events for the covariate fitters.
pub const MIN_COVARIATE_EVENTS: usize = 30;

/// Maximum-likelihood fit of one member of the family on (S, T].
pub fn fit_covariate_model(
    events: &[f64],
    window: (f64, f64),
    covariate: Option<&CovariateSeries>,
    family: &ModelFamily,
) -> Result<FitResult<CovariateModel>> {
    let (s, t_end) = window;
    if !(s < t_end) {
        return Err(invalid("window must satisfy S < T"));
    }
    if events.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("event times must be sorted"));
    }
    let n = events.iter().filter(|&&u| u > s && u <= t_end).count();
    if n < MIN_COVARIATE_EVENTS {
        return Err(invalid(format!("need at least {MIN_COVARIATE_EVENTS} events in the window, found {n}")));
    }
    let cov = if family.transfer {
        let c = covariate.ok_or_else(|| invalid("transfer model requested without a covariate series"))?;
        check_coverage(c, t_end)?;
        Some(c)
    } else {
        None
    };
    let len = t_end - s;
    let rate = n as f64 / len;
    let mut x0 = vec![rate];
    x0.extend(std::iter::repeat_n(0.0, family.trend_order));
    if let Some((_, k)) = family.fourier {
        x0.extend(std::iter::repeat_n(0.0, 2 * k));
    }
    if family.self_kernel {
        x0.extend([0.2, 1.0]);
    }
    if let (true, Some(c)) = (family.transfer, cov) {
        let a = if family.fit_power { 1.0 } else { family.fixed_power };
        let mean_w = transfer_weights(c, a).iter().sum::<f64>() / c.t.len() as f64 / c.step;
        let decay = 0.1;
        x0.push((0.2 * rate * decay / mean_w.max(1e-12)).max(1e-12));
        x0.push(decay);
        if family.fit_power {
            x0.push(1.0);
        }
    }
    let trend_scale = t_end.abs().max(len);
    let bounds = family.bounds();
    let obj = |x: &[f64]| {
        let m = family.unpack(x, trend_scale);
        loglik_inner(events, window, cov, &m).map_or(f64::INFINITY, |v| -v)
    };
    let r = minimize_with(obj, &x0, &bounds, &MinimizeOptions::with_tol(1e-11))?;
    let loglik = -r.f_opt;
    let dim = x0.len();
    Ok(FitResult {
        params: family.unpack(&r.x_opt, trend_scale),
        param_names: family.names(),
        loglik,
        aic: aic(loglik, dim),
        se: r.standard_errors(),
        window,
        n_events: n,
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval: r.n_eval,
    })
}

/// Nested comparison with and without the transfer term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityTest {
    pub with_transfer: FitResult<CovariateModel>,
    pub without_transfer: FitResult<CovariateModel>,
    /// AIC(with) − AIC(without).
    pub delta_aic: f64,
    /// `delta_aic` below −2.
    pub significant: bool,
}

/// Fits the family with and without the transfer term; negative ΔAIC
/// favours the covariate as a precursor. Swap the roles of the two series
/// (e.g. with [`CovariateSeries::from_events`]) to test the opposite
/// causality.
pub fn fit_covariate(
    events: &[f64],
    window: (f64, f64),
    covariate: &CovariateSeries,
    family: &ModelFamily,
) -> Result<CausalityTest> {
    let with = fit_covariate_model(events, window, Some(covariate), &ModelFamily { transfer: true, ..family.clone() })?;
    let without = fit_covariate_model(events, window, None, &ModelFamily { transfer: false, ..family.clone() })?;
    let delta_aic = with.aic - without.aic;
    Ok(CausalityTest { significant: delta_aic < -2.0, with_transfer: with, without_transfer: without, delta_aic })
}

/// Fits trend orders 0–3 and returns the order with the smallest AIC with
/// all four fits.
pub fn select_trend_order(
    events: &[f64],
    window: (f64, f64),
    covariate: Option<&CovariateSeries>,
    family: &ModelFamily,
) -> Result<(usize, Vec<FitResult<CovariateModel>>)> {
    let fits = (0..=3)
        .map(|j| fit_covariate_model(events, window, covariate, &ModelFamily { trend_order: j, ..family.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let best = fits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.aic.total_cmp(&b.1.aic))
        .map(|(j, _)| j)
        .unwrap_or(0);
    Ok((best, fits))
}

/// Amplitude and phase of one harmonic, c cos + s sin = R cos(ωt − φ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: usize,
    pub amplitude: f64,
    pub phase: f64,
    pub se_amplitude: f64,
    pub se_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFit {
    pub fit: FitResult<CovariateModel>,
    pub harmonics: Vec<Harmonic>,
}

/// Trend + Fourier + optional clustering model with harmonic summaries.
pub fn fit_periodic(
    events: &[f64],
    window: (f64, f64),
    period: f64,
    harmonics: usize,
    trend_order: usize,
    self_kernel: bool,
) -> Result<PeriodicFit> {
    if !(window.1 - window.0 >= 3.0 * period) {
        return Err(invalid("the window must span at least three periods"));
    }
    if harmonics == 0 {
        return Err(invalid("at least one harmonic is required"));
    }
    let family = ModelFamily { trend_order, self_kernel, fourier: Some((period, harmonics)), ..ModelFamily::default() };
    let fit = fit_covariate_model(events, window, None, &family)?;
    let coeffs = fit.params.fourier.as_ref().map(|f| f.coeffs.clone()).unwrap_or_default();
    let offset = 1 + trend_order;
    let harmonics = coeffs
        .chunks_exact(2)
        .enumerate()
        .map(|(k, c)| {
            let (a, b) = (c[0], c[1]);
            let r = a.hypot(b);
            let (sa, sb) = (fit.se[offset + 2 * k], fit.se[offset + 2 * k + 1]);
            // Delta method with the coefficient correlation neglected.
            let se_r = if r > 0.0 { ((a * sa).powi(2) + (b * sb).powi(2)).sqrt() / r } else { sa.max(sb) };
            let se_phi = if r > 0.0 { ((b * sa).powi(2) + (a * sb).powi(2)).sqrt() / (r * r) } else { f64::INFINITY };
            Harmonic { k: k + 1, amplitude: r, phase: b.atan2(a), se_amplitude: se_r, se_phase: se_phi }
        })
        .collect();
    Ok(PeriodicFit { fit, harmonics })
}

/// One station's intensity trajectory on the common time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSeries {
    pub rate: Vec<f64>,
    /// Average rate λ̂_{A_m}, used in declustered mode.
    pub mean_rate: f64,
}

/// Reference rate of the combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CombineBase {
    /// λ̂_A Π λ_m(t)/λ̂_m for declustered data.
    Declustered(f64),
    /// λ₀(t) Π λ_m(t)/λ₀(t) with λ₀ the clustering baseline.
    Clustered(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedIntensity {
    pub intensity: Vec<f64>,
    /// intensity / reference rate.
    pub gain: Vec<f64>,
}

/// Multiplies independent station gains on a common grid.
pub fn combine_stations(stations: &[StationSeries], base: &CombineBase) -> Result<CombinedIntensity> {
    let first = stations.first().ok_or_else(|| invalid("at least one station model is required"))?;
    let n = first.rate.len();
    if stations.iter().any(|s| s.rate.len() != n) {
        return Err(invalid("station series must share the time grid"));
    }
    let base_at = |i: usize| -> f64 {
        match base {
            CombineBase::Declustered(b) => *b,
            CombineBase::Clustered(v) => v[i],
        }
    };
    if let CombineBase::Clustered(v) = base {
        if v.len() != n {
            return Err(invalid("baseline series must share the station grid"));
        }
    }
    let mut intensity = Vec::with_capacity(n);
    let mut gain = Vec::with_capacity(n);
    for i in 0..n {
        let b = base_at(i);
        if !(b > 0.0) {
            return Err(invalid(format!("reference rate must be positive at grid index {i}")));
        }
        let mut g = 1.0;
        for (m, s) in stations.iter().enumerate() {
            let r = s.rate[i];
            if !(r > 0.0) {
                return Err(invalid(format!("station {m} intensity is not positive at grid index {i}")));
            }
            let denom = match base {
                CombineBase::Declustered(_) => s.mean_rate,
                CombineBase::Clustered(_) => b,
            };
            if !(denom > 0.0) {
                return Err(invalid(format!("station {m} mean rate must be positive")));
            }
            g *= r / denom;
        }
        gain.push(g);
        intensity.push(b * g);
    }
    Ok(CombinedIntensity { intensity, gain })
}

/// Exact thinning simulation of the family on `window`.
pub fn simulate_covariate_process(
    model: &CovariateModel,
    covariate: Option<&CovariateSeries>,
    window: (f64, f64),
    seed: u64,
) -> Result<Vec<f64>> {
    model.validate()?;
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(invalid("window must satisfy t0 < t1"));
    }
    if let Some(g) = &model.self_kernel {
        if !(g.amplitude / g.decay < 1.0) {
            return Err(Error::Supercritical { ratio: g.amplitude / g.decay });
        }
    }
    let cov = match (&model.transfer_kernel, covariate) {
        (Some(_), None) => return Err(invalid("model has a transfer term but no covariate was given")),
        (Some(_), Some(c)) => Some(c),
        _ => None,
    };
    let w = cov.map(|c| transfer_weights(c, model.covariate_power)).unwrap_or_default();
    let base_max = model.baseline_bound(t0, t1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = Vec::new();
    let mut self_state = 0.0;
    let mut tr_state = 0.0;
    let mut k = cov.map_or(0, |c| c.t.partition_point(|&s| s <= t0));
    // Transfer contribution of samples before t0.
    if let (Some(h), Some(c)) = (&model.transfer_kernel, cov) {
        tr_state = exp_filter_inclusive(&c.t, &w, h.decay, &[t0])[0];
    }
    let mut t = t0;
    let (g_amp, g_dec) = model.self_kernel.map_or((0.0, 1.0), |g| (g.amplitude, g.decay));
    let (h_amp, h_dec) = model.transfer_kernel.map_or((0.0, 1.0), |h| (h.amplitude, h.decay));
    loop {
        let next_sample = cov.and_then(|c| c.t.get(k).copied()).unwrap_or(f64::INFINITY);
        let bound = base_max + g_amp * self_state + h_amp * tr_state;
        let e: f64 = Exp1.sample(&mut rng);
        let cand = if bound > 0.0 { t + e / bound } else { f64::INFINITY };
        let stop = next_sample.min(t1);
        if cand >= stop {
            let dt = stop - t;
            self_state *= (-g_dec * dt).exp();
            tr_state *= (-h_dec * dt).exp();
            t = stop;
            if stop >= t1 {
                break;
            }
            tr_state += w[k];
            k += 1;
            continue;
        }
        let dt = cand - t;
        self_state *= (-g_dec * dt).exp();
        tr_state *= (-h_dec * dt).exp();
        t = cand;
        let lam = model.baseline(t).max(0.0) + g_amp * self_state + h_amp * tr_state;
        if rng.gen::<f64>() * bound <= lam {
            out.push(t);
            self_state += 1.0;
            if out.len() > crate::etas::MAX_SIMULATED_EVENTS {
                return Err(invalid("simulation produced too many events"));
            }
        }
    }
    Ok(out)
}

/// Covariance matrix from an optimizer Hessian, when it is invertible.
pub fn covariance(hessian: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    hessian.clone().try_inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utsu_combination_examples() {
        assert!((combine_exact(&PrecursorSet::new(0.3, vec![0.1]).unwrap()).unwrap() - 0.1).abs() < 1e-15);
        let s = PrecursorSet::new(0.001, vec![0.01, 0.01]).unwrap();
        let want = 1.0 / (1.0 + 99.0 * 99.0 / 999.0);
        assert!((combine_exact(&s).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.0925).abs() < 5e-5);
        let a = combine_approx(&s).unwrap();
        assert!((a.probability - 0.1).abs() < 1e-15);
        assert_eq!(a.gains, vec![10.0, 10.0]);
        let p = PrecursorSet::new(0.02, vec![0.05, 0.2, 0.07]).unwrap();
        let q = PrecursorSet::new(0.02, vec![0.2, 0.07, 0.05]).unwrap();
        assert!((combine_exact(&p).unwrap() - combine_exact(&q).unwrap()).abs() < 1e-15);
        assert!(PrecursorSet::new(0.0, vec![0.5]).is_err());
        assert!(PrecursorSet::new(0.1, vec![1.0]).is_err());
        let unit = combine_approx(&PrecursorSet::new(0.01, vec![0.01, 0.01]).unwrap()).unwrap();
        assert!((unit.probability - 0.01).abs() < 1e-15 && unit.total_gain == 1.0);
    }

    #[test]
    fn transfer_replica_and_reductions() {
        let model = CovariateModel {
            transfer_kernel: Some(ExpKernel { amplitude: 0.000117, decay: 0.142 }),
            covariate_power: 0.69,
            ..CovariateModel::poisson(0.00702)
        };
        let xi = CovariateSeries::new(vec![10.0], vec![1.0], 1.0).unwrap();
        let lam = covariate_intensity(10.0, &[], Some(&xi), &model).unwrap();
        assert!((lam - 0.007137).abs() < 1e-15);
        let zero = CovariateSeries::regular(0.0, 1.0, vec![0.0; 50]).unwrap();
        let plain = CovariateModel { trend: vec![0.3, -0.1], trend_scale: 10.0, ..CovariateModel::poisson(0.5) };
        let with = CovariateModel { transfer_kernel: model.transfer_kernel, covariate_power: 0.69, ..plain.clone() };
        let ev = [1.0, 2.5, 7.0, 20.0];
        for t in [3.0, 11.0, 30.0] {
            let a = covariate_intensity(t, &ev, Some(&zero), &with).unwrap();
            let b = covariate_intensity(t, &ev, None, &plain).unwrap();
            assert_eq!(a, b);
            assert!((b - (0.5 + 0.3 * t / 10.0 - 0.1 * (t / 10.0).powi(2))).abs() < 1e-15);
        }
        let neg = CovariateModel::poisson(-0.1);
        assert!(matches!(covariate_intensity(1.0, &[], None, &neg), Err(Error::NonPositiveIntensity { .. })));
    }

    #[test]
    fn fourier_oscillates_with_period() {
        let m = CovariateModel {
            fourier: Some(Fourier { period: ANNUAL_PERIOD_DAYS, coeffs: vec![0.2, 0.0] }),
            ..CovariateModel::poisson(1.0)
        };
        let at = |t| covariate_intensity(t, &[], None, &m).unwrap();
        assert!((at(0.0) - 1.2).abs() < 1e-15);
        assert!((at(ANNUAL_PERIOD_DAYS / 2.0) - 0.8).abs() < 1e-12);
        assert!((at(100.0) - at(100.0 + ANNUAL_PERIOD_DAYS)).abs() < 1e-12);
    }

    #[test]
    fn loglik_matches_direct_evaluation() {
        let model = CovariateModel {
            trend: vec![0.1],
            trend_scale: 100.0,
            self_kernel: Some(ExpKernel { amplitude: 0.3, decay: 0.8 }),
            transfer_kernel: Some(ExpKernel { amplitude: 0.05, decay: 0.2 }),
            covariate_power: 0.7,
            fourier: Some(Fourier { period: 30.0, coeffs: vec![0.05, -0.03] }),
            ..CovariateModel::poisson(0.4)
        };
        let xi = CovariateSeries::regular(0.0, 1.0, (0..120).map(|i| 1.0 + (i as f64 * 0.3).sin().abs() * 3.0).collect()).unwrap();
        let ev: Vec<f64> = (0..70).map(|i| i as f64 * 1.55 + (i as f64).sin().abs()).collect();
        let window = (5.0, 100.0);
        let ll = covariate_loglik(&ev, window, Some(&xi), &model).unwrap();
        let lam_sum: f64 = ev
            .iter()
            .filter(|&&t| t > window.0 && t <= window.1)
            .map(|&t| covariate_intensity(t, &ev, Some(&xi), &model).unwrap().ln())
            .sum();
        // Piecewise integration between kinks of the intensity.
        let mut knots: Vec<f64> = ev.iter().chain(&xi.t).copied().filter(|&t| t > window.0 && t < window.1).collect();
        knots.push(window.0);
        knots.push(window.1);
        knots.sort_by(f64::total_cmp);
        let mut integral = 0.0;
        for w in knots.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let tk = xi.t.partition_point(|&s| s <= mid);
            let f = |t: f64| {
                let mut v = model.baseline(t);
                v += 0.3 * ev.iter().filter(|&&u| u < mid).map(|u| (-0.8 * (t - u)).exp()).sum::<f64>();
                v += 0.05 * xi.t[..tk].iter().zip(&xi.value).map(|(s, x)| x.powf(0.7) * (-0.2 * (t - s)).exp()).sum::<f64>();
                v
            };
            integral += crate::numerics::integrate(f, w[0], w[1], 1e-13).unwrap();
        }
        assert!((ll - (lam_sum - integral)).abs() < 1e-9 * ll.abs());
    }

    #[test]
    fn station_products() {
        let s = StationSeries { rate: vec![0.2, 0.1], mean_rate: 0.1 };
        let one = combine_stations(std::slice::from_ref(&s), &CombineBase::Declustered(0.1)).unwrap();
        assert_eq!(one.intensity, vec![0.2, 0.1]);
        let avg = StationSeries { rate: vec![0.1, 0.1], mean_rate: 0.1 };
        let flat = combine_stations(&[avg.clone(), avg], &CombineBase::Declustered(0.05)).unwrap();
        assert_eq!(flat.intensity, vec![0.05, 0.05]);
        let three = StationSeries { rate: vec![0.3], mean_rate: 0.1 };
        let nine = combine_stations(&[three.clone(), three], &CombineBase::Declustered(0.1)).unwrap();
        assert!((nine.gain[0] - 9.0).abs() < 1e-12);
        let cl = combine_stations(&[StationSeries { rate: vec![0.6], mean_rate: 0.0 }], &CombineBase::Clustered(vec![0.2])).unwrap();
        assert!((cl.intensity[0] - 0.6).abs() < 1e-15);
        assert!(combine_stations(&[StationSeries { rate: vec![0.0], mean_rate: 0.1 }], &CombineBase::Declustered(0.1)).is_err());
    }

    #[test]
    fn simulation_rate_and_recovery() {
        let model = CovariateModel { self_kernel: Some(ExpKernel { amplitude: 0.5, decay: 2.0 }), ..CovariateModel::poisson(0.3) };
        let ev = simulate_covariate_process(&model, None, (0.0, 4000.0), 11).unwrap();
        let want = 0.3 * 4000.0 / (1.0 - 0.25);
        assert!((ev.len() as f64 - want).abs() < 4.0 * (want * 2.0).sqrt());
        let fam = ModelFamily { self_kernel: true, ..ModelFamily::default() };
        let fit = fit_covariate_model(&ev, (0.0, 4000.0), None, &fam).unwrap();
        let g = fit.params.self_kernel.unwrap();
        assert!((fit.params.mu0 - 0.3).abs() < 3.0 * fit.se[0]);
        assert!((g.amplitude / g.decay - 0.25).abs() < 0.1);
    }
}
