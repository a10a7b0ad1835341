//! Space–time ETAS with anisotropic cluster kernels.
//!
//! λ(t, x, y) = ν·μ(x, y) + Σ_{tⱼ<t} K (t − tⱼ + c)^(−p) [r_Sⱼ(x − x̄ⱼ, y − ȳⱼ)/e^{α(Mⱼ−M_c)} + d]^(−q)
//!
//! The spatial factor is left unnormalized, so K absorbs its mass. Offsets
//! are measured in km through a local equirectangular projection about each
//! kernel centroid, while rates are expressed per day per square degree.
//! Depth is ignored.
//!
//! The quadratic form is
//! r_S(x, y) = {(σ₂/σ₁)x² + 2ρxy + (σ₁/σ₂)y²}/√(1 − ρ²),
//! a matrix of unit determinant. It coincides with the normalized inverse
//! covariance of a bivariate normal whose correlation is −ρ, which is how
//! [`estimate_cluster_shape`] fills in ρ.

mod background;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Event, KM_PER_DEGREE};
use crate::error::{invalid, Error, Result};
use crate::fit::{aic, names, FitResult};
use crate::numerics::{fastmath, minimize_bfgs, power_law_integral, power_law_integral_derivs, Bound, MinimizeOptions};

pub use background::BackgroundField;
pub use simulate::{st_branching_ratio, simulate_st_etas};

/// Parameters of the space–time ETAS intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StEtasParams {
    /// Multiplier ν of the background field.
    pub nu_scale: f64,
    pub k_prod: f64,
    /// Omori c (days).
    pub c_off: f64,
    pub alpha_m: f64,
    pub p_exp: f64,
    /// Spatial offset d (km²).
    pub d_spread: f64,
    /// Spatial decay exponent, > 1.
    pub q_exp: f64,
    /// Reference magnitude M_c.
    pub m_ref: f64,
}

pub const ST_PARAM_NAMES: [&str; 7] = ["nu", "K", "c", "alpha", "p", "d", "q"];

impl StEtasParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nu_scale > 0.0
            && self.k_prod > 0.0
            && self.c_off > 0.0
            && self.alpha_m > 0.0
            && self.p_exp > 0.0
            && self.d_spread > 0.0
            && self.q_exp > 1.0
            && self.m_ref.is_finite();
        if !ok {
            return Err(invalid(format!("invalid space-time ETAS parameters {self:?}")));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> [f64; 7] {
        [self.nu_scale, self.k_prod, self.c_off, self.alpha_m, self.p_exp, self.d_spread, self.q_exp]
    }

    pub fn from_slice(x: &[f64], m_ref: f64) -> Self {
        Self {
            nu_scale: x[0],
            k_prod: x[1],
            c_off: x[2],
            alpha_m: x[3],
            p_exp: x[4],
            d_spread: x[5],
            q_exp: x[6],
            m_ref,
        }
    }

    /// ∫∫ [r/e^{α(M−M_c)} + d]^(−q) over the plane in km², which is the same
    /// for every unit-determinant shape.
    pub fn spatial_mass_km2(&self, mag: f64) -> f64 {
        std::f64::consts::PI * (self.alpha_m * (mag - self.m_ref)).exp()
            / ((self.q_exp - 1.0) * self.d_spread.powf(self.q_exp - 1.0))
    }
}

/// Anisotropy of one triggering kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterShape {
    /// (lon, lat) in degrees.
    pub centroid: (f64, f64),
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
}

impl ClusterShape {
    pub fn identity_at(lon: f64, lat: f64) -> Self {
        Self { centroid: (lon, lat), sigma1: 1.0, sigma2: 1.0, rho: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.sigma1 == self.sigma2 && self.rho == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0 && self.rho.abs() < 1.0) {
            return Err(invalid(format!("cluster shape {self:?} is not positive definite")));
        }
        Ok(())
    }

    /// Coefficients (s₁₁, s₁₂, s₂₂) of the quadratic form.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        let k = 1.0 / (1.0 - self.rho * self.rho).sqrt();
        (k * self.sigma2 / self.sigma1, k * self.rho, k * self.sigma1 / self.sigma2)
    }

    /// r_S at the km offset (x, y).
    pub fn quadratic_form(&self, x: f64, y: f64) -> f64 {
        let (a, b, c) = self.coefficients();
        a * x * x + 2.0 * b * x * y + c * y * y
    }

    /// km offset of (lon, lat) from the centroid.
    pub fn offset_km(&self, lon: f64, lat: f64) -> (f64, f64) {
        let kx = KM_PER_DEGREE * self.centroid.1.to_radians().cos();
        ((lon - self.centroid.0) * kx, (lat - self.centroid.1) * KM_PER_DEGREE)
    }

    /// km² per square degree at the centroid.
    pub fn jacobian(&self) -> f64 {
        KM_PER_DEGREE * KM_PER_DEGREE * self.centroid.1.to_radians().cos()
    }
}

/// Which time window selects cluster members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeWindow {
    /// 10^{0.5M−1} days after the large event.
    Catalog,
    /// One hour after the large event.
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeStatus {
    Fitted,
    TooFewMembers,
    /// Members are (nearly) collinear; the identity shape was used.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub shape: ClusterShape,
    pub n_members: usize,
    pub status: ShapeStatus,
}

/// Side of the square member window in km.
pub fn shape_window_km(mag: f64) -> f64 {
    3.33 * 10f64.powf(0.5 * mag - 2.0)
}

/// Duration of the member window in days.
pub fn shape_window_days(mag: f64, mode: ShapeWindow) -> f64 {
    match mode {
        ShapeWindow::Catalog => 10f64.powf(0.5 * mag - 1.0),
        ShapeWindow::Forecast => 1.0 / 24.0,
    }
}

/// Minimum number of members for a moment fit.
pub const MIN_SHAPE_MEMBERS: usize = 5;

/// Moment fit of a bivariate normal to the events following `mainshock`
/// inside its space–time window.
pub fn estimate_cluster_shape(events: &[Event], mainshock: &Event, mode: ShapeWindow) -> ShapeEstimate {
    let half = shape_window_km(mainshock.mag) / 2.0;
    let days = shape_window_days(mainshock.mag, mode);
    let origin = ClusterShape::identity_at(mainshock.lon, mainshock.lat);
    let pts: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| e.t >= mainshock.t && e.t - mainshock.t <= days)
        .map(|e| origin.offset_km(e.lon, e.lat))
        .filter(|(x, y)| x.abs() <= half && y.abs() <= half)
        .collect();
    let n = pts.len();
    if n < MIN_SHAPE_MEMBERS {
        return ShapeEstimate { shape: origin, n_members: n, status: ShapeStatus::TooFewMembers };
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let centroid = (
        mainshock.lon + mx / (KM_PER_DEGREE * mainshock.lat.to_radians().cos()),
        mainshock.lat + my / KM_PER_DEGREE,
    );
    let scale = sxx.max(syy);
    if !(sxx > 1e-12 * scale && syy > 1e-12 * scale && scale > 0.0) {
        return ShapeEstimate { shape: origin, n_members: n, status: ShapeStatus::Degenerate };
    }
    let r = sxy / (sxx * syy).sqrt();
    if !(1.0 - r * r > 1e-9) {
        return ShapeEstimate { shape: origin, n_members: n, status: ShapeStatus::Degenerate };
    }
    let ratio = (syy / sxx).sqrt();
    ShapeEstimate {
        shape: ClusterShape { centroid, sigma1: ratio.powf(-0.5), sigma2: ratio.sqrt(), rho: -r },
        n_members: n,
        status: ShapeStatus::Fitted,
    }
}

/// Shapes for every catalog event: moment fits for events of magnitude at
/// least `m_large`, identity shapes at the epicenter for the rest.
pub fn assign_cluster_shapes(catalog: &Catalog, m_large: f64, mode: ShapeWindow) -> Vec<ClusterShape> {
    catalog
        .events
        .iter()
        .map(|e| {
            if e.mag >= m_large {
                estimate_cluster_shape(&catalog.events, e, mode).shape
            } else {
                ClusterShape::identity_at(e.lon, e.lat)
            }
        })
        .collect()
}

fn resolve_shapes(events: &[Event], shapes: &[ClusterShape]) -> Result<Vec<ClusterShape>> {
    if shapes.is_empty() {
        return Ok(events.iter().map(|e| ClusterShape::identity_at(e.lon, e.lat)).collect());
    }
    if shapes.len() != events.len() {
        return Err(invalid(format!("{} shapes for {} events", shapes.len(), events.len())));
    }
    for s in shapes {
        s.validate()?;
    }
    Ok(shapes.to_vec())
}

/// Per-source constants of the triggering kernel.
#[derive(Debug, Clone, Copy)]
struct Source {
    t: f64,
    cx: f64,
    cy: f64,
    kx: f64,
    a11: f64,
    a12: f64,
    a22: f64,
    dm: f64,
    jac: f64,
}

impl Source {
    fn new(e: &Event, s: &ClusterShape, m_ref: f64) -> Self {
        let (a11, a12, a22) = s.coefficients();
        Self {
            t: e.t,
            cx: s.centroid.0,
            cy: s.centroid.1,
            kx: KM_PER_DEGREE * s.centroid.1.to_radians().cos(),
            a11,
            a12,
            a22,
            dm: e.mag - m_ref,
            jac: s.jacobian(),
        }
    }

    #[inline(always)]
    fn r(&self, lon: f64, lat: f64) -> f64 {
        let x = (lon - self.cx) * self.kx;
        let y = (lat - self.cy) * KM_PER_DEGREE;
        self.a11 * x * x + 2.0 * self.a12 * x * y + self.a22 * y * y
    }
}

/// Conditional intensity in events/day/deg². `shapes` is either empty
/// (identity shapes) or parallel to `history`.
pub fn st_intensity(
    t: f64,
    lon: f64,
    lat: f64,
    history: &[Event],
    shapes: &[ClusterShape],
    params: &StEtasParams,
    bg: &BackgroundField,
) -> Result<f64> {
    params.validate()?;
    if history.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(invalid("history is not sorted by time"));
    }
    if let Some(last) = history.last() {
        if last.t > t {
            return Err(invalid(format!("history event at {} is later than t = {t}", last.t)));
        }
    }
    let shapes = resolve_shapes(history, shapes)?;
    let p = params;
    let mut sum = 0.0;
    for (e, s) in history.iter().zip(&shapes).filter(|(e, _)| e.t < t) {
        let src = Source::new(e, s, p.m_ref);
        let spread = src.r(lon, lat) * (-p.alpha_m * src.dm).exp() + p.d_spread;
        sum += (t - e.t + p.c_off).powf(-p.p_exp) * spread.powf(-p.q_exp);
    }
    Ok(p.nu_scale * bg.value_at(lon, lat)? + p.k_prod * sum)
}

/// Λ over the window: background mass plus the closed-form space–time mass
/// of every triggering kernel.
pub fn st_compensator(catalog: &Catalog, params: &StEtasParams, bg: &BackgroundField, window: (f64, f64)) -> Result<f64> {
    params.validate()?;
    let (s, t_end) = window;
    let mut total = params.nu_scale * bg.integral() * (t_end - s);
    for e in catalog.events.iter().filter(|e| e.t < t_end) {
        let jac = KM_PER_DEGREE * KM_PER_DEGREE * e.lat.to_radians().cos();
        total += params.k_prod
            * power_law_integral((s - e.t).max(0.0), t_end - e.t, params.c_off, params.p_exp)
            * params.spatial_mass_km2(e.mag)
            / jac;
    }
    Ok(total)
}

struct StPrepared {
    sources: Vec<Source>,
    /// (index, location, background value) of each target event.
    targets: Vec<(usize, f64, f64, f64)>,
    bg_mass: f64,
    window: (f64, f64),
}

impl StPrepared {
    fn new(catalog: &Catalog, shapes: &[ClusterShape], bg: &BackgroundField, window: (f64, f64), m_ref: f64) -> Result<Self> {
        let (s, t_end) = window;
        if !(s < t_end) || !s.is_finite() || !t_end.is_finite() {
            return Err(invalid(format!("window ({s}, {t_end}) must satisfy S < T")));
        }
        if catalog.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(invalid("catalog is not sorted by time"));
        }
        let shapes = resolve_shapes(&catalog.events, shapes)?;
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for (e, sh) in catalog.events.iter().zip(&shapes).filter(|(e, _)| e.t <= t_end) {
            if e.t > s {
                targets.push((sources.len(), e.lon, e.lat, bg.value_at(e.lon, e.lat)?));
            }
            sources.push(Source::new(e, sh, m_ref));
        }
        Ok(Self { sources, targets, bg_mass: bg.integral(), window })
    }

    /// Negative log-likelihood and its gradient in (ν, K, c, α, p, d, q).
    fn neg_loglik_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let [nu, k, c, alpha, p, d, q] = [theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], theta[6]];
        let scale: Vec<f64> = self.sources.iter().map(|s| fastmath::exp(-alpha * s.dm)).collect();
        let mut f = 0.0;
        let mut g = [0.0; 7];
        for &(i, lon, lat, mu) in &self.targets {
            let ti = self.sources[i].t;
            let hist = self.sources[..i].partition_point(|s| s.t < ti);
            // Σ G, Σ G/x, Σ G·ΔM·(s−d)/s, Σ G·ln x, Σ G/s, Σ G·ln s.
            let mut acc = [0.0; 6];
            for (src, sc) in self.sources[..hist].iter().zip(&scale) {
                let x = ti - src.t + c;
                let r = src.r(lon, lat) * sc;
                let sp = r + d;
                let lx = fastmath::ln(x);
                let ls = fastmath::ln(sp);
                let gv = fastmath::exp(-p * lx - q * ls);
                let inv_s = 1.0 / sp;
                acc[0] += gv;
                acc[1] += gv / x;
                acc[2] += gv * src.dm * r * inv_s;
                acc[3] += gv * lx;
                acc[4] += gv * inv_s;
                acc[5] += gv * ls;
            }
            let lam = nu * mu + k * acc[0];
            if !(lam > 0.0) || !lam.is_finite() {
                return None;
            }
            let inv = 1.0 / lam;
            f -= lam.ln();
            g[0] -= mu * inv;
            g[1] -= acc[0] * inv;
            g[2] += p * k * acc[1] * inv;
            g[3] -= k * q * acc[2] * inv;
            g[4] += k * acc[3] * inv;
            g[5] += q * k * acc[4] * inv;
            g[6] += k * acc[5] * inv;
        }
        let (s, t_end) = self.window;
        let len = t_end - s;
        f += nu * self.bg_mass * len;
        g[0] += self.bg_mass * len;
        let base = std::f64::consts::PI / ((q - 1.0) * d.powf(q - 1.0));
        let (dlog_d, dlog_q) = (-(q - 1.0) / d, -1.0 / (q - 1.0) - d.ln());
        for src in &self.sources {
            let om = power_law_integral_derivs((s - src.t).max(0.0), t_end - src.t, c, p);
            let m = base * (alpha * src.dm).exp() / src.jac;
            let a = k * om.value * m;
            f += a;
            g[1] += om.value * m;
            g[2] += k * om.d_c * m;
            g[3] += a * src.dm;
            g[4] += k * om.d_p * m;
            g[5] += a * dlog_d;
            g[6] += a * dlog_q;
        }
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then(|| (f, g.to_vec()))
    }
}

/// Log-likelihood of the events in (S, T] under the space–time model.
pub fn st_loglik(
    catalog: &Catalog,
    shapes: &[ClusterShape],
    params: &StEtasParams,
    bg: &BackgroundField,
    window: (f64, f64),
) -> Result<f64> {
    params.validate()?;
    let prep = StPrepared::new(catalog, shapes, bg, window, params.m_ref)?;
    prep.neg_loglik_grad(&params.to_vec())
        .map(|(f, _)| -f)
        .ok_or(Error::NonPositiveIntensity { t: window.0 })
}

/// Minimum number of target events for [`fit_st_etas`].
pub const MIN_ST_EVENTS: usize = 200;

/// Maximum-likelihood fit of (ν, K, c, α, p, d, q) with an analytic gradient.
pub fn fit_st_etas(
    catalog: &Catalog,
    shapes: &[ClusterShape],
    bg: &BackgroundField,
    window: (f64, f64),
    init: &StEtasParams,
) -> Result<FitResult<StEtasParams>> {
    init.validate()?;
    let prep = StPrepared::new(catalog, shapes, bg, window, init.m_ref)?;
    let n = prep.targets.len();
    if n < MIN_ST_EVENTS {
        return Err(invalid(format!("need at least {MIN_ST_EVENTS} events in the window, found {n}")));
    }
    if !(prep.bg_mass > 0.0) {
        return Err(invalid("background field has zero mass"));
    }
    let mut bounds = [Bound::Positive; 7];
    bounds[6] = Bound::Lower(1.0);
    let opts = MinimizeOptions { tol: 1e-12, max_eval: 3000, ..MinimizeOptions::default() };
    let obj = |x: &[f64]| prep.neg_loglik_grad(x);
    let mut r = minimize_bfgs(obj, &init.to_vec(), &bounds, &opts)?;
    let mut n_eval = r.n_eval;
    // A restart from the optimum resets the curvature estimate.
    let again = minimize_bfgs(obj, &r.x_opt, &bounds, &opts)?;
    n_eval += again.n_eval;
    if again.f_opt <= r.f_opt {
        r = again;
    }
    let loglik = -r.f_opt;
    Ok(FitResult {
        params: StEtasParams::from_slice(&r.x_opt, init.m_ref),
        param_names: names(&ST_PARAM_NAMES),
        loglik,
        aic: aic(loglik, 7),
        se: r.standard_errors(),
        window,
        n_events: n,
        converged: r.converged,
        hessian_pd: r.hessian_pd,
        n_eval,
    })
}

/// Background probabilities and one thinned background catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Declustering {
    /// φᵢ = ν·μ(xᵢ, yᵢ)/λ(tᵢ, xᵢ, yᵢ) for every catalog event.
    pub phi: Vec<f64>,
    /// Events kept with probability φᵢ.
    pub background: Catalog,
    pub seed: u64,
}

/// Stochastic declustering weights for every event of `catalog`.
pub fn background_weights(
    catalog: &Catalog,
    shapes: &[ClusterShape],
    params: &StEtasParams,
    bg: &BackgroundField,
    seed: u64,
) -> Result<Declustering> {
    use rand::{Rng, SeedableRng};
    params.validate()?;
    let ev = &catalog.events;
    let shapes = resolve_shapes(ev, shapes)?;
    let sources: Vec<Source> = ev.iter().zip(&shapes).map(|(e, s)| Source::new(e, s, params.m_ref)).collect();
    let scale: Vec<f64> = sources.iter().map(|s| (-params.alpha_m * s.dm).exp()).collect();
    let mut phi = Vec::with_capacity(ev.len());
    for (i, e) in ev.iter().enumerate() {
        let hist = ev[..i].partition_point(|h| h.t < e.t);
        let mut sum = 0.0;
        for (src, sc) in sources[..hist].iter().zip(&scale) {
            let spread = src.r(e.lon, e.lat) * sc + params.d_spread;
            sum += (e.t - src.t + params.c_off).powf(-params.p_exp) * spread.powf(-params.q_exp);
        }
        let b = params.nu_scale * bg.value_at(e.lon, e.lat)?;
        let lam = b + params.k_prod * sum;
        phi.push(if lam > 0.0 { (b / lam).clamp(0.0, 1.0) } else { 1.0 });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let kept: Vec<Event> = ev
        .iter()
        .zip(&phi)
        .filter(|(_, &f)| rng.gen::<f64>() < f)
        .map(|(e, _)| *e)
        .collect();
    let mut background = Catalog::with_span(kept, catalog.t_span);
    background.epoch = catalog.epoch;
    background.mc = catalog.mc;
    background.region = catalog.region.clone();
    Ok(Declustering { phi, background, seed })
}

/// Expected number of background events ν·∫μ·(T − S).
pub fn expected_background(params: &StEtasParams, bg: &BackgroundField, window: (f64, f64)) -> f64 {
    params.nu_scale * bg.integral() * (window.1 - window.0)
}

/// Weighted kernel-density re-estimate of the background from the
/// declustering weights of events in (S, T].
pub fn update_background(
    catalog: &Catalog,
    shapes: &[ClusterShape],
    params: &StEtasParams,
    bg: &BackgroundField,
    window: (f64, f64),
    bandwidth_km: f64,
) -> Result<BackgroundField> {
    let dec = background_weights(catalog, shapes, params, bg, 0)?;
    let points: Vec<(f64, f64, f64)> = catalog
        .events
        .iter()
        .zip(&dec.phi)
        .filter(|(e, _)| e.t > window.0 && e.t <= window.1)
        .map(|(e, &f)| (e.lon, e.lat, f))
        .collect();
    BackgroundField::from_weighted_points(bg, &points, bandwidth_km, window.1 - window.0)
}

/// Outcome of alternating fits and background updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundIteration {
    pub fit: FitResult<StEtasParams>,
    pub field: BackgroundField,
    /// Maximum relative field change after each update.
    pub changes: Vec<f64>,
    pub converged: bool,
}

/// Alternates [`fit_st_etas`] and [`update_background`] until the largest
/// relative change of the field falls below `tol` or `max_iter` updates ran.
#[allow(clippy::too_many_arguments)]
pub fn iterate_background(
    catalog: &Catalog,
    shapes: &[ClusterShape],
    bg: &BackgroundField,
    window: (f64, f64),
    init: &StEtasParams,
    bandwidth_km: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BackgroundIteration> {
    let mut field = bg.clone();
    let mut fit = fit_st_etas(catalog, shapes, &field, window, init)?;
    let mut changes = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = update_background(catalog, shapes, &fit.params, &field, window, bandwidth_km)?;
        let change = next.max_relative_change(&field);
        changes.push(change);
        field = next;
        fit = fit_st_etas(catalog, shapes, &field, window, &fit.params)?;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(BackgroundIteration { fit, field, changes, converged })
}
