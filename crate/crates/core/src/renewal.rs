//! Brownian passage time renewal models for characteristic earthquakes.
//!
//! The inter-event law is inverse Gaussian with mean μ and aperiodicity α,
//!
//! f(x) = √(μ/(2πα²x³)) · exp(−(x − μ)²/(2α²μx)).
//!
//! Hierarchical estimation places lognormal priors on μⱼ (centered on a
//! geodetic recurrence estimate when one is available) and on αⱼ, integrates
//! each segment's likelihood against them and selects hyperparameters by
//! maximizing the integrated likelihood. Competing prior structures are
//! compared through ABIC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, InverseGaussian};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{aic, names, FitResult};
use crate::numerics::{
    erfcx, gauss_legendre, integrate, integrate_2d_panels, integrate_detailed, minimize_with, std_normal_cdf, Bound,
    MinimizeOptions,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean recurrence interval (years) and aperiodicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BptParams {
    pub mean_iv: f64,
    pub aperiodicity: f64,
}

impl BptParams {
    pub fn new(mean_iv: f64, aperiodicity: f64) -> Result<Self> {
        let p = Self { mean_iv, aperiodicity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_iv > 0.0 && self.aperiodicity > 0.0) || !self.mean_iv.is_finite() || !self.aperiodicity.is_finite() {
            return Err(invalid(format!("BPT parameters must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Inverse-Gaussian shape μ/α².
    pub fn shape(&self) -> f64 {
        self.mean_iv / (self.aperiodicity * self.aperiodicity)
    }
}

/// Density, distribution, survivor and hazard at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BptValues {
    pub pdf: f64,
    pub cdf: f64,
    pub survivor: f64,
    pub hazard: f64,
}

pub fn bpt_log_pdf(x: f64, p: &BptParams) -> f64 {
    let a2 = p.aperiodicity * p.aperiodicity;
    0.5 * (p.mean_iv.ln() - a2.ln() - LN_2PI - 3.0 * x.ln()) - (x - p.mean_iv).powi(2) / (2.0 * a2 * p.mean_iv * x)
}

/// ln(1 − F(x)), finite far into the upper tail.
pub fn bpt_log_survivor(x: f64, p: &BptParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (p.shape() / x).sqrt();
    let a = r * (x / p.mean_iv - 1.0);
    let b = r * (x / p.mean_iv + 1.0);
    let tail = 0.5 * erfcx(b * std::f64::consts::FRAC_1_SQRT_2);
    if a <= 0.0 {
        (std_normal_cdf(-a) - tail * (-0.5 * a * a).exp()).ln()
    } else {
        let diff = 0.5 * erfcx(a * std::f64::consts::FRAC_1_SQRT_2) - tail;
        -0.5 * a * a + diff.max(f64::MIN_POSITIVE).ln()
    }
}

pub fn bpt_cdf(x: f64, p: &BptParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (p.shape() / x).sqrt();
    let a = r * (x / p.mean_iv - 1.0);
    let b = r * (x / p.mean_iv + 1.0);
    if a <= 0.0 {
        std_normal_cdf(a) + 0.5 * erfcx(b * std::f64::consts::FRAC_1_SQRT_2) * (-0.5 * a * a).exp()
    } else {
        -(bpt_log_survivor(x, p).exp_m1())
    }
}

/// pdf, cdf, survivor and hazard of the BPT law at `x` years.
pub fn bpt_functions(x: f64, params: &BptParams) -> Result<BptValues> {
    params.validate()?;
    if !(x > 0.0) {
        return Err(invalid(format!("BPT functions need x > 0, got {x}")));
    }
    let log_pdf = bpt_log_pdf(x, params);
    let log_sv = bpt_log_survivor(x, params);
    Ok(BptValues {
        pdf: log_pdf.exp(),
        cdf: bpt_cdf(x, params),
        survivor: log_sv.exp(),
        hazard: (log_pdf - log_sv).exp(),
    })
}

/// Recurrence record of one fault segment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentData {
    pub id: String,
    /// Complete inter-event times (years).
    pub intervals: Vec<f64>,
    /// Time since the last event (years).
    pub open_tail: Option<f64>,
    /// Time from the start of observation to the first event, when the
    /// observation start is not itself an event.
    pub open_head: Option<f64>,
    /// Geodetic recurrence estimate T = U/V (years).
    pub geodetic_mean: Option<f64>,
}

impl SegmentData {
    pub fn new(id: impl Into<String>, intervals: Vec<f64>) -> Self {
        Self { id: id.into(), intervals, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(invalid(format!("segment {}: intervals must be positive", self.id)));
        }
        for (name, v) in [("open tail", self.open_tail), ("open head", self.open_head)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(invalid(format!("segment {}: {name} must be non-negative", self.id)));
                }
            }
        }
        if let Some(t) = self.geodetic_mean {
            if !(t > 0.0) {
                return Err(invalid(format!("segment {}: geodetic mean must be positive", self.id)));
            }
        }
        if self.intervals.is_empty() && self.open_tail.is_none() {
            return Err(invalid(format!("segment {} has neither intervals nor an open tail", self.id)));
        }
        Ok(())
    }
}

/// Sufficient statistics of a segment for fast likelihood evaluation.
#[derive(Debug, Clone, Copy)]
struct SegmentStats {
    n: f64,
    sum: f64,
    sum_inv: f64,
    /// Σ ½ ln(2πx³).
    constant: f64,
    open_tail: Option<f64>,
    open_head: Option<f64>,
}

impl SegmentStats {
    fn new(d: &SegmentData) -> Self {
        Self {
            n: d.intervals.len() as f64,
            sum: d.intervals.iter().sum(),
            sum_inv: d.intervals.iter().map(|x| 1.0 / x).sum(),
            constant: d.intervals.iter().map(|x| 0.5 * (LN_2PI + 3.0 * x.ln())).sum(),
            open_tail: d.open_tail,
            open_head: d.open_head,
        }
    }

    fn loglik(&self, mu: f64, alpha: f64) -> f64 {
        let p = BptParams { mean_iv: mu, aperiodicity: alpha };
        let a2 = alpha * alpha;
        let mut ll = if self.n > 0.0 {
            0.5 * self.n * (mu.ln() - a2.ln()) - self.constant
                - (self.sum - 2.0 * self.n * mu + mu * mu * self.sum_inv) / (2.0 * a2 * mu)
        } else {
            0.0
        };
        for v in [self.open_tail, self.open_head].into_iter().flatten() {
            ll += bpt_log_survivor(v, &p);
        }
        ll
    }
}

/// Σ ln f(intervals) plus the survivor terms of the open tail and head.
pub fn renewal_loglik(data: &SegmentData, params: &BptParams) -> Result<f64> {
    data.validate()?;
    params.validate()?;
    Ok(SegmentStats::new(data).loglik(params.mean_iv, params.aperiodicity))
}

/// Maximum-likelihood (μ, α) for a single segment.
///
/// Without open terms the estimate is closed form: μ̂ is the sample mean and
/// α̂² = μ̂·mean(1/x − 1/μ̂).
pub fn fit_bpt_mle(data: &SegmentData) -> Result<FitResult<BptParams>> {
    data.validate()?;
    let n = data.intervals.len();
    if n < 2 {
        return Err(invalid(format!("segment {}: need at least 2 intervals for a maximum-likelihood fit", data.id)));
    }
    let nf = n as f64;
    let mean = data.intervals.iter().sum::<f64>() / nf;
    let inv_lambda = data.intervals.iter().map(|x| 1.0 / x - 1.0 / mean).sum::<f64>() / nf;
    let alpha0 = (mean * inv_lambda).sqrt();
    if !(alpha0 > 1e-8) {
        return Err(Error::Degenerate(format!("segment {}: intervals are identical, aperiodicity is zero", data.id)));
    }
    let stats = SegmentStats::new(data);
    let bounds = [Bound::Positive; 2];
    let r = minimize_with(
        |x: &[f64]| -stats.loglik(x[0], x[1]),
        &[mean, alpha0],
        &bounds,
        &MinimizeOptions { restarts: 1, ..MinimizeOptions::with_tol(1e-13) },
    )?;
    let loglik = -r.f_opt;
    Ok(FitResult {
        params: BptParams { mean_iv: r.x_opt[0], aperiodicity: r.x_opt[1] },
        param_names: names(&["mean_iv", "aperiodicity"]),
        loglik,
        aic: aic(loglik, 2),
        se: r.standard_errors(),
        window: (0.0, data.intervals.iter().sum()),
        n_events: n,
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval: r.n_eval,
    })
}

/// `n` independent inverse-Gaussian intervals.
pub fn simulate_bpt(params: &BptParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("need at least one interval"));
    }
    let dist = InverseGaussian::new(params.mean_iv, params.shape()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Hyperparameters (location, spread) of the log-scale priors.
///
/// ln μⱼ ~ N(ln Tⱼ + φ_μ.0, φ_μ.1²) with Tⱼ the geodetic estimate (1 year
/// when absent), and ln αⱼ ~ N(φ_α.0, φ_α.1²). A zero α spread denotes an
/// aperiodicity shared exactly by all segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub phi_mu: (f64, f64),
    pub phi_alpha: (f64, f64),
}

/// Structure of the aperiodicity prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPrior {
    /// Lognormal across segments; four hyperparameters.
    Lognormal,
    /// A single α for every segment; three hyperparameters.
    Shared,
    /// A separate α per segment, each a hyperparameter.
    PerSegment,
}

/// Prior of one segment after the hyperparameters are fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPrior {
    /// Mean and sd of ln μ.
    pub ln_mu: (f64, f64),
    /// Mean and sd of ln α; a zero sd fixes α = e^mean.
    pub ln_alpha: (f64, f64),
}

impl SegmentPrior {
    pub fn from_hyper(data: &SegmentData, hyper: &HyperParams) -> Self {
        let center = data.geodetic_mean.unwrap_or(1.0).ln() + hyper.phi_mu.0;
        Self { ln_mu: (center, hyper.phi_mu.1), ln_alpha: hyper.phi_alpha }
    }

    fn domain(&self) -> ((f64, f64), Option<(f64, f64)>) {
        let (m, s) = self.ln_mu;
        let u = (m - 6.0 * s, m + 6.0 * s);
        let (ma, sa) = self.ln_alpha;
        let v = (sa > 0.0).then_some((ma - 6.0 * sa, ma + 6.0 * sa));
        (u, v)
    }
}

fn ln_normal(x: f64, m: f64, s: f64) -> f64 {
    let z = (x - m) / s;
    -0.5 * z * z - s.ln() - 0.5 * LN_2PI
}

/// Log of ∬ L(μ, α) π₁(μ) π₂(α) dμ dα by adaptive quadrature over ±6 prior
/// standard deviations in log space.
pub fn segment_log_evidence(data: &SegmentData, prior: &SegmentPrior, tol: f64) -> Result<f64> {
    let stats = SegmentStats::new(data);
    let (um, us) = prior.ln_mu;
    let (vm, vs) = prior.ln_alpha;
    if !(us > 0.0) || !(vs >= 0.0) {
        return Err(invalid("prior spreads must be positive"));
    }
    let (ud, vd) = prior.domain();
    let fail = |e: Error| Error::Integration(format!("segment {}: {e}", data.id));
    match vd {
        None => {
            let alpha = vm.exp();
            let g = |u: f64| stats.loglik(u.exp(), alpha) + ln_normal(u, um, us);
            let shift = grid_max_1d(&g, ud, 81);
            let r = integrate_detailed(|u| (g(u) - shift).exp(), ud.0, ud.1, tol, 8).map_err(fail)?;
            finite_log(r.value, shift, &data.id)
        }
        Some(vd) => {
            let g = |u: f64, v: f64| stats.loglik(u.exp(), v.exp()) + ln_normal(u, um, us) + ln_normal(v, vm, vs);
            let mut shift = f64::NEG_INFINITY;
            for i in 0..=40 {
                let u = ud.0 + (ud.1 - ud.0) * i as f64 / 40.0;
                for j in 0..=40 {
                    let v = vd.0 + (vd.1 - vd.0) * j as f64 / 40.0;
                    shift = shift.max(g(u, v));
                }
            }
            let val = integrate_2d_panels(|u, v| (g(u, v) - shift).exp(), ud, vd, tol, 4).map_err(fail)?;
            finite_log(val, shift, &data.id)
        }
    }
}

fn finite_log(value: f64, shift: f64, id: &str) -> Result<f64> {
    if !(value > 0.0) || !shift.is_finite() {
        return Err(Error::Integration(format!("segment {id}: integrated likelihood vanished")));
    }
    Ok(value.ln() + shift)
}

fn grid_max_1d(g: &impl Fn(f64) -> f64, d: (f64, f64), n: usize) -> f64 {
    (0..=n)
        .map(|i| g(d.0 + (d.1 - d.0) * i as f64 / n as f64))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One support point of a discretized posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorAtom {
    pub params: BptParams,
    pub weight: f64,
}

/// Normalized posterior of (μ, α) for one segment on a Gauss–Legendre grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPosterior {
    pub id: String,
    pub atoms: Vec<PosteriorAtom>,
    pub log_evidence: f64,
}

impl SegmentPosterior {
    /// A posterior concentrated on `params`.
    pub fn point_mass(id: impl Into<String>, params: BptParams) -> Self {
        Self { id: id.into(), atoms: vec![PosteriorAtom { params, weight: 1.0 }], log_evidence: 0.0 }
    }

    pub fn posterior_mean(&self) -> BptParams {
        let mut m = (0.0, 0.0);
        for a in &self.atoms {
            m.0 += a.weight * a.params.mean_iv;
            m.1 += a.weight * a.params.aperiodicity;
        }
        BptParams { mean_iv: m.0, aperiodicity: m.1 }
    }

    /// The highest-weight atom.
    pub fn mode(&self) -> BptParams {
        self.atoms
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .map(|a| a.params)
            .unwrap_or(BptParams { mean_iv: f64::NAN, aperiodicity: f64::NAN })
    }
}

/// Number of Gauss–Legendre nodes per axis used for posterior atoms.
pub const POSTERIOR_NODES: usize = 64;

/// Discretized posterior of one segment under `prior`.
pub fn segment_posterior(data: &SegmentData, prior: &SegmentPrior) -> Result<SegmentPosterior> {
    data.validate()?;
    let log_evidence = segment_log_evidence(data, prior, 1e-10)?;
    let stats = SegmentStats::new(data);
    let (ud, vd) = prior.domain();
    let (x, w) = gauss_legendre(POSTERIOR_NODES);
    let map = |d: (f64, f64), t: f64| 0.5 * (d.0 + d.1) + 0.5 * (d.1 - d.0) * t;
    let (um, us) = prior.ln_mu;
    let (vm, vs) = prior.ln_alpha;
    let mut raw = Vec::new();
    for (xu, wu) in x.iter().zip(&w) {
        let u = map(ud, *xu);
        match vd {
            None => {
                let lg = stats.loglik(u.exp(), vm.exp()) + ln_normal(u, um, us);
                raw.push((u, vm, wu.ln() + lg));
            }
            Some(vd) => {
                for (xv, wv) in x.iter().zip(&w) {
                    let v = map(vd, *xv);
                    let lg = stats.loglik(u.exp(), v.exp()) + ln_normal(u, um, us) + ln_normal(v, vm, vs);
                    raw.push((u, v, wu.ln() + wv.ln() + lg));
                }
            }
        }
    }
    let top = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Integration(format!("segment {}: posterior weights vanished", data.id)));
    }
    let total: f64 = raw.iter().map(|r| (r.2 - top).exp()).sum();
    let atoms = raw
        .into_iter()
        .map(|(u, v, lw)| PosteriorAtom {
            params: BptParams { mean_iv: u.exp(), aperiodicity: v.exp() },
            weight: (lw - top).exp() / total,
        })
        .filter(|a| a.weight > 0.0)
        .collect();
    Ok(SegmentPosterior { id: data.id.clone(), atoms, log_evidence })
}

/// Result of [`fit_hier_bayes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierFit {
    pub alpha_prior: AlphaPrior,
    pub hyper: HyperParams,
    /// Per-segment aperiodicities of the [`AlphaPrior::PerSegment`] model.
    pub segment_alphas: Option<Vec<f64>>,
    pub posteriors: Vec<SegmentPosterior>,
    /// max ln Λ(φ).
    pub log_marginal: f64,
    pub n_hyper: usize,
    pub abic: f64,
    pub converged: bool,
}

const EVIDENCE_TOL: f64 = 1e-9;

fn total_log_evidence(segments: &[SegmentData], priors: impl Fn(usize, &SegmentData) -> SegmentPrior) -> Result<f64> {
    let mut s = 0.0;
    for (j, d) in segments.iter().enumerate() {
        s += segment_log_evidence(d, &priors(j, d), EVIDENCE_TOL)?;
    }
    Ok(s)
}

/// Golden-section maximization of a unimodal function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Range searched for per-segment ln α.
const LN_ALPHA_RANGE: (f64, f64) = (-4.6, 1.6);

fn per_segment_alpha(d: &SegmentData, ln_mu: (f64, f64)) -> (f64, f64) {
    let eval = |v: f64| {
        let prior = SegmentPrior { ln_mu, ln_alpha: (v, 0.0) };
        segment_log_evidence(d, &prior, EVIDENCE_TOL).unwrap_or(f64::NEG_INFINITY)
    };
    // Coarse scan first, since the profile can be flat far from the data.
    let n = 24;
    let step = (LN_ALPHA_RANGE.1 - LN_ALPHA_RANGE.0) / n as f64;
    let best = (0..=n)
        .map(|i| LN_ALPHA_RANGE.0 + step * i as f64)
        .map(|v| (v, eval(v)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    golden_max(eval, best.0 - step, best.0 + step, 1e-4)
}

/// Empirical-Bayes fit of the hierarchical renewal model.
///
/// Hyperparameters maximize Λ(φ) = Πⱼ ∬ L(μⱼ, αⱼ | Xⱼ) π₁(μⱼ) π₂(αⱼ) dμⱼ dαⱼ;
/// ABIC = −2 max ln Λ + 2 dim(φ).
pub fn fit_hier_bayes(segments: &[SegmentData], alpha_prior: AlphaPrior) -> Result<HierFit> {
    if segments.len() < 2 {
        return Err(invalid("hierarchical fit needs at least two segments"));
    }
    for d in segments {
        d.validate()?;
    }
    // Moment-style starting values from segments with complete intervals.
    let mut logs = Vec::new();
    let mut cvs = Vec::new();
    for d in segments.iter().filter(|d| !d.intervals.is_empty()) {
        let n = d.intervals.len() as f64;
        let m = d.intervals.iter().sum::<f64>() / n;
        logs.push((m / d.geodetic_mean.unwrap_or(1.0)).ln());
        if d.intervals.len() >= 2 {
            let var = d.intervals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            cvs.push(var.sqrt() / m);
        }
    }
    let loc0 = if logs.is_empty() { 0.0 } else { logs.iter().sum::<f64>() / logs.len() as f64 };
    let spread0 = if logs.len() > 1 {
        (logs.iter().map(|l| (l - loc0).powi(2)).sum::<f64>() / (logs.len() - 1) as f64).sqrt().clamp(0.05, 2.0)
    } else {
        0.5
    };
    let alpha0 = if cvs.is_empty() { 0.3 } else { (cvs.iter().sum::<f64>() / cvs.len() as f64).clamp(0.05, 2.0) };
    let opts = MinimizeOptions { restarts: 1, compute_hessian: false, ..MinimizeOptions::with_tol(1e-9) };
    let spread_bound = Bound::Interval(1e-3, 5.0);

    let (hyper, segment_alphas, log_marginal, n_hyper, converged) = match alpha_prior {
        AlphaPrior::Lognormal => {
            let obj = |x: &[f64]| {
                let h = HyperParams { phi_mu: (x[0], x[1]), phi_alpha: (x[2], x[3]) };
                total_log_evidence(segments, |_, d| SegmentPrior::from_hyper(d, &h)).map_or(f64::INFINITY, |v| -v)
            };
            let r = minimize_with(
                obj,
                &[loc0, spread0, alpha0.ln(), 0.3],
                &[Bound::Free, spread_bound, Bound::Free, spread_bound],
                &opts,
            )?;
            let h = HyperParams { phi_mu: (r.x_opt[0], r.x_opt[1]), phi_alpha: (r.x_opt[2], r.x_opt[3]) };
            (h, None, -r.f_opt, 4, r.converged)
        }
        AlphaPrior::Shared => {
            let obj = |x: &[f64]| {
                let h = HyperParams { phi_mu: (x[0], x[1]), phi_alpha: (x[2].ln(), 0.0) };
                total_log_evidence(segments, |_, d| SegmentPrior::from_hyper(d, &h)).map_or(f64::INFINITY, |v| -v)
            };
            let r = minimize_with(
                obj,
                &[loc0, spread0, alpha0],
                &[Bound::Free, spread_bound, Bound::Interval(1e-2, 5.0)],
                &opts,
            )?;
            let h = HyperParams { phi_mu: (r.x_opt[0], r.x_opt[1]), phi_alpha: (r.x_opt[2].ln(), 0.0) };
            (h, None, -r.f_opt, 3, r.converged)
        }
        AlphaPrior::PerSegment => {
            let profile = |x: &[f64]| -> f64 {
                segments
                    .iter()
                    .map(|d| {
                        let center = d.geodetic_mean.unwrap_or(1.0).ln() + x[0];
                        per_segment_alpha(d, (center, x[1])).1
                    })
                    .sum()
            };
            let r = minimize_with(|x: &[f64]| {
                let v = profile(x);
                if v.is_finite() { -v } else { f64::INFINITY }
            }, &[loc0, spread0], &[Bound::Free, spread_bound], &opts)?;
            let alphas: Vec<f64> = segments
                .iter()
                .map(|d| {
                    let center = d.geodetic_mean.unwrap_or(1.0).ln() + r.x_opt[0];
                    per_segment_alpha(d, (center, r.x_opt[1])).0.exp()
                })
                .collect();
            let h = HyperParams { phi_mu: (r.x_opt[0], r.x_opt[1]), phi_alpha: (f64::NAN, 0.0) };
            (h, Some(alphas), -r.f_opt, 2 + segments.len(), r.converged)
        }
    };

    let posteriors = segments
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let mut prior = SegmentPrior::from_hyper(d, &hyper);
            if let Some(a) = &segment_alphas {
                prior.ln_alpha = (a[j].ln(), 0.0);
            }
            segment_posterior(d, &prior)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HierFit {
        alpha_prior,
        hyper,
        segment_alphas,
        posteriors,
        log_marginal,
        n_hyper,
        abic: -2.0 * log_marginal + 2.0 * n_hyper as f64,
        converged,
    })
}

/// Posterior-averaged predictive density of the next interval.
pub fn predictive_density(posterior: &SegmentPosterior, y: f64) -> f64 {
    if !(y > 0.0) {
        return 0.0;
    }
    posterior.atoms.iter().map(|a| a.weight * bpt_log_pdf(y, &a.params).exp()).sum()
}

/// Posterior-averaged predictive survivor function.
pub fn predictive_survivor(posterior: &SegmentPosterior, y: f64) -> f64 {
    if !(y > 0.0) {
        return 1.0;
    }
    posterior.atoms.iter().map(|a| a.weight * bpt_log_survivor(y, &a.params).exp()).sum()
}

/// Predictive density, survivor and hazard on a grid of interval lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub y: Vec<f64>,
    pub density: Vec<f64>,
    pub survivor: Vec<f64>,
    pub hazard: Vec<f64>,
}

pub fn bayes_predict(posterior: &SegmentPosterior, grid: &[f64]) -> Predictive {
    let density: Vec<f64> = grid.iter().map(|&y| predictive_density(posterior, y)).collect();
    let survivor: Vec<f64> = grid.iter().map(|&y| predictive_survivor(posterior, y)).collect();
    let hazard = density
        .iter()
        .zip(&survivor)
        .map(|(f, s)| if *s > 0.0 { f / s } else { f64::INFINITY })
        .collect();
    Predictive { y: grid.to_vec(), density, survivor, hazard }
}

/// ∫₀^∞ of the predictive density.
pub fn predictive_mass(posterior: &SegmentPosterior) -> Result<f64> {
    let scale = posterior.posterior_mean().mean_iv;
    // Split at the mean so both pieces are well resolved.
    let head = integrate(|y| predictive_density(posterior, y), 0.0, scale, 1e-11)?;
    let tail = integrate(|y| predictive_density(posterior, y), scale, f64::INFINITY, 1e-11)?;
    Ok(head + tail)
}

/// Source of parameters for [`forecast_interval_prob`].
#[derive(Debug, Clone, Copy)]
pub enum Forecaster<'a> {
    Plugin(BptParams),
    Posterior(&'a SegmentPosterior),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub probability: f64,
    /// Set when the survivor probability at t₀ fell below 1e−12 and the
    /// probability was saturated at 1.
    pub saturated: bool,
}

fn conditional_prob(p: &BptParams, t0: f64, horizon: f64) -> (f64, bool) {
    let s0 = bpt_log_survivor(t0, p);
    if s0 < (1e-12f64).ln() {
        return (1.0, true);
    }
    if horizon == 0.0 {
        return (0.0, false);
    }
    let s1 = if horizon.is_infinite() { f64::NEG_INFINITY } else { bpt_log_survivor(t0 + horizon, p) };
    (-(s1 - s0).exp_m1(), false)
}

/// P(event in (t₀, t₀ + Δ] | none by t₀) with t₀ the segment's open tail.
pub fn forecast_interval_prob(data: &SegmentData, forecaster: Forecaster<'_>, horizon: f64) -> Result<IntervalForecast> {
    let t0 = data
        .open_tail
        .ok_or_else(|| invalid(format!("segment {}: open tail (time since last event) is required", data.id)))?;
    if !(horizon >= 0.0) {
        return Err(invalid("horizon must be non-negative"));
    }
    let (probability, saturated) = match forecaster {
        Forecaster::Plugin(p) => {
            p.validate()?;
            conditional_prob(&p, t0, horizon)
        }
        Forecaster::Posterior(post) => post.atoms.iter().fold((0.0, false), |(acc, sat), a| {
            let (pr, s) = conditional_prob(&a.params, t0, horizon);
            (acc + a.weight * pr, sat || s)
        }),
    };
    Ok(IntervalForecast { probability: probability.clamp(0.0, 1.0), saturated })
}

/// Reads segments from an interval table (`segment_id, interval_years`) and
/// an optional header table (`segment_id, open_tail_years, geodetic_T_years`
/// and optionally `open_head_years`). Empty cells mean "absent".
pub fn parse_segments(intervals_csv: &str, header_csv: Option<&str>) -> Result<Vec<SegmentData>> {
    let mut out: Vec<SegmentData> = Vec::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(intervals_csv.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("interval table row {}: {e}", i + 2)))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let x: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("interval table row {}: bad interval", i + 2)))?;
        match out.iter_mut().find(|s| s.id == id) {
            Some(s) => s.intervals.push(x),
            None => out.push(SegmentData::new(id, vec![x])),
        }
    }
    if let Some(h) = header_csv {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(h.as_bytes());
        let headers = reader.headers().map_err(|e| invalid(format!("segment header table: {e}")))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (c_tail, c_t, c_head) = (col("open_tail_years"), col("geodetic_T_years"), col("open_head_years"));
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| invalid(format!("segment header row {}: {e}", i + 2)))?;
            let id = rec.get(0).unwrap_or("").to_string();
            let num = |c: Option<usize>| -> Result<Option<f64>> {
                match c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
                    None => Ok(None),
                    Some(s) => s
                        .parse()
                        .map(Some)
                        .map_err(|_| invalid(format!("segment header row {}: bad number {s:?}", i + 2))),
                }
            };
            let seg = match out.iter_mut().position(|s| s.id == id) {
                Some(k) => &mut out[k],
                None => {
                    out.push(SegmentData::new(id, Vec::new()));
                    out.last_mut().unwrap()
                }
            };
            seg.open_tail = num(c_tail)?;
            seg.geodetic_mean = num(c_t)?;
            seg.open_head = num(c_head)?;
        }
    }
    for s in &out {
        s.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> BptParams {
        BptParams::new(1.0, 0.24).unwrap()
    }

    #[test]
    fn density_at_mean() {
        let v = bpt_functions(1.0, &p()).unwrap();
        assert!((v.pdf - 1.0 / (0.24 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
        assert!((v.pdf - 1.66226).abs() < 5e-6);
        assert!((v.pdf - v.hazard * v.survivor).abs() < 1e-12);
        assert!(bpt_functions(0.0, &p()).is_err());
    }

    #[test]
    fn cdf_matches_quadrature() {
        for &(mu, a) in &[(1.0, 0.24), (100.0, 0.5), (30.0, 1.3)] {
            let q = BptParams::new(mu, a).unwrap();
            let total = integrate(|x| bpt_log_pdf(x, &q).exp(), 0.0, f64::INFINITY, 1e-12).unwrap();
            assert!((total - 1.0).abs() < 1e-8);
            for &f in &[0.5, 1.0, 2.0] {
                let quad = integrate(|x| bpt_log_pdf(x, &q).exp(), 0.0, f * mu, 1e-13).unwrap();
                let c = bpt_cdf(f * mu, &q);
                assert!(((c - quad) / quad).abs() < 1e-8, "{mu} {a} {f}: {c} vs {quad}");
                assert!((c + bpt_log_survivor(f * mu, &q).exp() - 1.0).abs() < 1e-13);
            }
        }
        let far = bpt_log_survivor(30.0, &p());
        assert!(far.is_finite() && far < -200.0);
    }

    #[test]
    fn survivor_terms() {
        let mut d = SegmentData::new("a", vec![1.0]);
        let base = renewal_loglik(&d, &p()).unwrap();
        assert!((base - bpt_functions(1.0, &p()).unwrap().pdf.ln()).abs() < 1e-12);
        d.open_tail = Some(0.0);
        assert_eq!(renewal_loglik(&d, &p()).unwrap(), base);
        d.open_tail = Some(1.2);
        let with = renewal_loglik(&d, &p()).unwrap();
        assert!((with - base - bpt_log_survivor(1.2, &p())).abs() < 1e-12);
    }

    #[test]
    fn forecast_limits_and_quadrature() {
        let q = BptParams::new(100.0, 0.24).unwrap();
        let mut d = SegmentData::new("s", vec![]);
        d.open_tail = Some(90.0);
        let f = |h| forecast_interval_prob(&d, Forecaster::Plugin(q), h).unwrap().probability;
        assert_eq!(f(0.0), 0.0);
        assert!((f(f64::INFINITY) - 1.0).abs() < 1e-15);
        let num = integrate(|x| bpt_log_pdf(x, &q).exp(), 90.0, 120.0, 1e-13).unwrap();
        let want = num / bpt_log_survivor(90.0, &q).exp();
        assert!((f(30.0) - want).abs() < 1e-6);
        d.open_tail = Some(2000.0);
        assert!(forecast_interval_prob(&d, Forecaster::Plugin(q), 1.0).unwrap().saturated);
    }

    #[test]
    fn simulation_moments_and_mle() {
        let q = BptParams::new(100.0, 0.24).unwrap();
        let xs = simulate_bpt(&q, 10_000, 4).unwrap();
        assert_eq!(xs, simulate_bpt(&q, 10_000, 4).unwrap());
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 100.0).abs() < 3.0 * 24.0 / n.sqrt());
        assert!((sd / mean - 0.24).abs() < 0.05 * 0.24);
        let fit = fit_bpt_mle(&SegmentData::new("x", xs[..1000].to_vec())).unwrap();
        assert!((fit.params.mean_iv - 100.0).abs() < 3.0 * fit.se[0]);
        assert!((fit.params.aperiodicity - 0.24).abs() < 3.0 * fit.se[1]);
    }

    #[test]
    fn tight_prior_dominates_single_interval() {
        let d = SegmentData { geodetic_mean: Some(100.0), ..SegmentData::new("t", vec![130.0]) };
        let h = HyperParams { phi_mu: (0.0, 0.01), phi_alpha: (0.24f64.ln(), 0.01) };
        let post = segment_posterior(&d, &SegmentPrior::from_hyper(&d, &h)).unwrap();
        let m = post.posterior_mean();
        assert!((m.mean_iv / 100.0 - 1.0).abs() < 0.01);
        assert!((m.aperiodicity / 0.24 - 1.0).abs() < 0.02);
        let total: f64 = post.atoms.iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((predictive_mass(&post).unwrap() - 1.0).abs() < 1e-6);
        let point = SegmentPosterior::point_mass("t", p());
        assert!((predictive_density(&point, 1.3) - bpt_functions(1.3, &p()).unwrap().pdf).abs() < 1e-15);
    }

    #[test]
    fn parses_segment_tables() {
        let iv = "segment_id,interval_years\nA,120\nA,95\nB,300\n";
        let hd = "segment_id,open_tail_years,geodetic_T_years\nA,40,110\nC,200,150\n";
        let segs = parse_segments(iv, Some(hd)).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].intervals, vec![120.0, 95.0]);
        assert_eq!(segs[0].open_tail, Some(40.0));
        assert_eq!(segs[1].geodetic_mean, None);
        assert!(segs[2].intervals.is_empty() && segs[2].geodetic_mean == Some(150.0));
        assert!(parse_segments("segment_id,interval_years\nA,-3\n", None).is_err());
    }
}
