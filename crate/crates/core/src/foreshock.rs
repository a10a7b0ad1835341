//! Foreshock discrimination with standardized pair statistics and a logit
//! forecast that is updated as a cluster grows.
//!
//! The logit convention is f = log((1 − p)/p), so p = 1/(1 + e^f) and a
//! larger f means a smaller foreshock probability.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::{Event, KM_PER_DEGREE};
use crate::error::{invalid, Error, Result};
use crate::etas_st::BackgroundField;
use crate::fit::aic;

/// Scale of the magnitude-difference transform for g ≤ 0.
pub const SIGMA1: f64 = 0.6709;
/// Scale of the magnitude-difference transform for g > 0.
pub const SIGMA2: f64 = 0.4456;
/// Cell count at which the location prior's shrinkage weight reaches 1/2.
pub const PRIOR_SHRINKAGE: f64 = 20.0;
/// Minimum number of labelled clusters for a fit.
pub const MIN_CLUSTERS: usize = 100;
/// Coefficient magnitude at which a fit is declared separated.
pub const COEF_CAP: f64 = 50.0;

/// Standardized statistics of one ordered pair (i < j).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStatistics {
    pub tau_std: f64,
    pub rho_std: f64,
    pub gamma_std: f64,
}

/// Maps time difference (days), separation (km) and magnitude difference
/// into the unit interval.
pub fn standardize_pair(dt: f64, dr: f64, dg: f64) -> PairStatistics {
    let tau = if dt > 0.0 { ((100.0 * dt).ln() / 3000f64.ln()).clamp(0.0, 1.0) } else { 0.0 };
    let rho = 1.0 - (-dr.max(0.0).min(50.0) / 20.0).exp();
    let gamma = if dg <= 0.0 {
        2.0 / 3.0 * (dg / SIGMA1).exp()
    } else {
        2.0 / 3.0 + (1.0 - (-dg / SIGMA2).exp()) / 3.0
    };
    PairStatistics { tau_std: tau, rho_std: rho, gamma_std: gamma }
}

/// Flat-earth separation with the mean-latitude cosine, in km.
pub fn pair_separation_km(a: &Event, b: &Event) -> f64 {
    let theta = (0.5 * (a.lat + b.lat)).to_radians();
    let dx = (b.lon - a.lon) * theta.cos();
    let dy = b.lat - a.lat;
    KM_PER_DEGREE * dx.hypot(dy)
}

/// Statistics of members `i < j` in time order.
pub fn pair_statistics(a: &Event, b: &Event) -> PairStatistics {
    standardize_pair(b.t - a.t, pair_separation_km(a, b), b.mag - a.mag)
}

/// Grid of prior foreshock probabilities by location of the first event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrior {
    pub grid: BackgroundField,
}

impl LocationPrior {
    pub fn new(grid: BackgroundField) -> Result<Self> {
        if let Some(v) = grid.values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(invalid(format!("location prior value {v} is outside (0, 1)")));
        }
        Ok(Self { grid })
    }

    /// Single value over a rectangle.
    pub fn constant(bounds: (f64, f64, f64, f64), p: f64) -> Result<Self> {
        let (x0, x1, y0, y1) = bounds;
        Self::new(BackgroundField::uniform(bounds, (x1 - x0, y1 - y0), p)?)
    }

    pub fn prob_at(&self, lon: f64, lat: f64) -> Result<f64> {
        self.grid.value_at(lon, lat)
    }

    /// Reads `lon, lat, prob` rows at cell centres.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        Self::new(BackgroundField::read_csv(input)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| invalid(format!("writing location prior: {e}"));
        w.write_record(["lon", "lat", "prob"]).map_err(io)?;
        for iy in 0..self.grid.ny {
            for ix in 0..self.grid.nx {
                let (x, y) = self.grid.cell_center(ix, iy);
                let v = self.grid.values[iy * self.grid.nx + ix];
                w.write_record([x.to_string(), y.to_string(), v.to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| invalid(format!("writing location prior: {e}")))?;
        Ok(())
    }
}

/// Logit model with polynomial pair terms of degree up to 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeshockModel {
    pub location_prior: LocationPrior,
    pub mu0: f64,
    pub b_coef: [f64; 3],
    pub c_coef: [f64; 3],
    pub d_coef: [f64; 3],
}

impl ForeshockModel {
    /// Model with no pair adjustment.
    pub fn prior_only(location_prior: LocationPrior) -> Self {
        Self { location_prior, mu0: 0.0, b_coef: [0.0; 3], c_coef: [0.0; 3], d_coef: [0.0; 3] }
    }

    /// μ₀ + Σ bₖγᵏ + Σ cₖρᵏ + Σ dₖτᵏ for one pair.
    pub fn pair_term(&self, s: &PairStatistics) -> f64 {
        let poly = |c: &[f64; 3], x: f64| c[0] * x + c[1] * x * x + c[2] * x * x * x;
        self.mu0 + poly(&self.b_coef, s.gamma_std) + poly(&self.c_coef, s.rho_std) + poly(&self.d_coef, s.tau_std)
    }
}

/// f = log((1 − p)/p).
pub fn logit(p: f64) -> f64 {
    ((1.0 - p) / p).ln()
}

/// p = 1/(1 + e^f).
pub fn inv_logit(f: f64) -> f64 {
    1.0 / (1.0 + f.exp())
}

fn mean_pair_term(members: &[Event], model: &ForeshockModel) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 1..members.len() {
        for i in 0..j {
            sum += model.pair_term(&pair_statistics(&members[i], &members[j]));
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_members(members: &[Event]) -> Result<()> {
    if members.is_empty() {
        return Err(invalid("cluster has no members"));
    }
    if members.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(invalid("cluster members must be in time order"));
    }
    Ok(())
}

/// Probability that the cluster observed so far is of foreshock type.
pub fn foreshock_probability(members: &[Event], model: &ForeshockModel) -> Result<f64> {
    check_members(members)?;
    let first = &members[0];
    let prior = model.location_prior.prob_at(first.lon, first.lat)?;
    Ok(inv_logit(logit(prior) + mean_pair_term(members, model)))
}

/// Probabilities after each of the first 1, 2, …, n members.
pub fn probability_path(members: &[Event], model: &ForeshockModel) -> Result<Vec<f64>> {
    check_members(members)?;
    let first = &members[0];
    let base = logit(model.location_prior.prob_at(first.lon, first.lat)?);
    let mut out = vec![inv_logit(base)];
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for j in 1..members.len() {
        for i in 0..j {
            sum += model.pair_term(&pair_statistics(&members[i], &members[j]));
            pairs += 1;
        }
        out.push(inv_logit(base + sum / pairs as f64));
    }
    Ok(out)
}

/// Observed cluster members with the label to be predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCluster {
    pub members: Vec<Event>,
    pub is_foreshock: bool,
}

/// How the location prior enters the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    /// Class rate per cell of this template, shrunk toward the global rate.
    Estimate(BackgroundField),
    Fixed(LocationPrior),
}

/// Polynomial degree of the pair terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderSelection {
    Fixed(usize),
    /// Smallest AIC over degrees 1–3.
    Aic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeshockFit {
    pub model: ForeshockModel,
    pub order: usize,
    /// Names in the order of `coefficients` and `se`.
    pub param_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    /// (degree, AIC) for every degree that was fitted.
    pub aic_by_order: Vec<(usize, f64)>,
    /// Perfect or quasi-perfect classification; coefficients were capped.
    pub separated: bool,
    pub converged: bool,
    pub n_clusters: usize,
}

/// Cell class rates shrunk toward the global rate with weight n/(n + 20).
pub fn estimate_location_prior(template: &BackgroundField, labeled: &[LabeledCluster]) -> Result<LocationPrior> {
    let total = labeled.len() as f64;
    let pos = labeled.iter().filter(|c| c.is_foreshock).count() as f64;
    if pos == 0.0 || pos == total {
        return Err(Error::Degenerate("location prior needs both foreshock and other clusters".into()));
    }
    let global = pos / total;
    let cells = template.nx * template.ny;
    let (mut n, mut k) = (vec![0.0; cells], vec![0.0; cells]);
    for c in labeled {
        let e = c.members.first().ok_or_else(|| invalid("labelled cluster has no members"))?;
        let idx = template.index(e.lon, e.lat)?;
        n[idx] += 1.0;
        if c.is_foreshock {
            k[idx] += 1.0;
        }
    }
    let values = n
        .iter()
        .zip(&k)
        .map(|(&n, &k)| {
            if n == 0.0 {
                global
            } else {
                let w = n / (n + PRIOR_SHRINKAGE);
                w * k / n + (1.0 - w) * global
            }
        })
        .collect();
    LocationPrior::new(BackgroundField::new(template.bounds, template.nx, template.ny, values)?)
}

/// Pair-averaged design row [1, γ…γᵒ, ρ…ρᵒ, τ…τᵒ].
fn design_row(members: &[Event], order: usize) -> Vec<f64> {
    let dim = 1 + 3 * order;
    let mut row = vec![0.0; dim];
    let mut pairs = 0usize;
    for j in 1..members.len() {
        for i in 0..j {
            let s = pair_statistics(&members[i], &members[j]);
            row[0] += 1.0;
            for (g, x) in [s.gamma_std, s.rho_std, s.tau_std].into_iter().enumerate() {
                let mut pw = 1.0;
                for k in 0..order {
                    pw *= x;
                    row[1 + g * order + k] += pw;
                }
            }
            pairs += 1;
        }
    }
    if pairs > 0 {
        row.iter_mut().for_each(|v| *v /= pairs as f64);
    }
    row
}

struct Irls {
    beta: DVector<f64>,
    cov: Option<DMatrix<f64>>,
    loglik: f64,
    separated: bool,
    converged: bool,
}

/// Logistic regression P(y=1) = σ(offset − x·β) by Newton iterations.
fn irls(x: &DMatrix<f64>, y: &[bool], offset: &[f64]) -> Irls {
    let (n, d) = x.shape();
    let mut beta = DVector::zeros(d);
    let loglik_of = |beta: &DVector<f64>| -> f64 {
        let eta = x * beta;
        (0..n)
            .map(|i| {
                let f = offset[i] - eta[i];
                // log σ(f) and log(1 − σ(f)) computed stably.
                let lp = if f >= 0.0 { -(-f).exp().ln_1p() } else { f - f.exp().ln_1p() };
                let lq = if f >= 0.0 { -f - (-f).exp().ln_1p() } else { -f.exp().ln_1p() };
                if y[i] {
                    lp
                } else {
                    lq
                }
            })
            .sum()
    };
    let mut ll = loglik_of(&beta);
    let mut converged = false;
    let mut separated = false;
    for _ in 0..200 {
        let eta = x * &beta;
        let mut grad = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        for i in 0..n {
            let p = 1.0 / (1.0 + (eta[i] - offset[i]).exp());
            let r = if y[i] { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            let xi = x.row(i);
            // d ll / d β = −(y − p)·x.
            grad -= xi.transpose() * r;
            info += xi.transpose() * xi * w;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = &info + DMatrix::identity(d, d) * 1e-8 * (1.0 + info.diagonal().max());
                match ridge.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => break,
                }
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &beta + &step * t;
            let lc = loglik_of(&cand);
            if lc >= ll - 1e-12 {
                let gain = lc - ll;
                beta = cand;
                ll = lc;
                accepted = true;
                if gain.abs() < 1e-10 * (1.0 + ll.abs()) && step.amax() * t < 1e-8 * (1.0 + beta.amax()) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if beta.amax() > COEF_CAP {
            separated = true;
            beta.iter_mut().for_each(|b| *b = b.clamp(-COEF_CAP, COEF_CAP));
            ll = loglik_of(&beta);
            break;
        }
        if !accepted || converged {
            converged = converged || step.amax() < 1e-6;
            break;
        }
    }
    // Fitted probabilities all within 1e-8 of the labels also indicate
    // separation.
    let eta = x * &beta;
    let perfect = (0..n).all(|i| {
        let p = 1.0 / (1.0 + (eta[i] - offset[i]).exp());
        if y[i] {
            p > 1.0 - 1e-8
        } else {
            p < 1e-8
        }
    });
    separated |= perfect;
    let mut info = DMatrix::zeros(d, d);
    for i in 0..n {
        let p = 1.0 / (1.0 + (eta[i] - offset[i]).exp());
        let xi = x.row(i);
        info += xi.transpose() * xi * (p * (1.0 - p));
    }
    let cov = info.try_inverse();
    Irls { beta, cov, loglik: ll, separated, converged }
}

fn fit_order(rows: &[Vec<f64>], y: &[bool], offset: &[f64], order: usize, prior: &LocationPrior, n_clusters: usize) -> ForeshockFit {
    let d = 1 + 3 * order;
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let r = irls(&x, y, offset);
    let mut names = vec!["mu0".to_string()];
    for g in ["b", "c", "d"] {
        names.extend((1..=order).map(|k| format!("{g}{k}")));
    }
    let se: Vec<f64> = match &r.cov {
        Some(c) => (0..d).map(|i| if c[(i, i)] > 0.0 { c[(i, i)].sqrt() } else { f64::NAN }).collect(),
        None => vec![f64::NAN; d],
    };
    let group = |g: usize| {
        let mut c = [0.0; 3];
        for k in 0..order {
            c[k] = r.beta[1 + g * order + k];
        }
        c
    };
    let model = ForeshockModel {
        location_prior: prior.clone(),
        mu0: r.beta[0],
        b_coef: group(0),
        c_coef: group(1),
        d_coef: group(2),
    };
    ForeshockFit {
        model,
        order,
        param_names: names,
        coefficients: r.beta.iter().copied().collect(),
        se,
        loglik: r.loglik,
        aic: aic(r.loglik, d),
        aic_by_order: Vec::new(),
        separated: r.separated,
        converged: r.converged,
        n_clusters,
    }
}

/// Maximum-likelihood fit of the pair-term coefficients.
///
/// Each cluster contributes one Bernoulli term evaluated with all its listed
/// members. Clusters with a single member depend only on the location prior.
pub fn fit_foreshock_model(labeled: &[LabeledCluster], prior: &PriorSpec, order: OrderSelection) -> Result<ForeshockFit> {
    if labeled.len() < MIN_CLUSTERS {
        return Err(invalid(format!("need at least {MIN_CLUSTERS} labelled clusters, found {}", labeled.len())));
    }
    let pos = labeled.iter().filter(|c| c.is_foreshock).count();
    if pos == 0 || pos == labeled.len() {
        return Err(Error::Degenerate("labels contain a single class; the logit model is not identifiable".into()));
    }
    for c in labeled {
        check_members(&c.members)?;
    }
    let prior = match prior {
        PriorSpec::Estimate(t) => estimate_location_prior(t, labeled)?,
        PriorSpec::Fixed(p) => p.clone(),
    };
    let multi: Vec<&LabeledCluster> = labeled.iter().filter(|c| c.members.len() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::Degenerate("no cluster has two or more members".into()));
    }
    let offset = multi
        .iter()
        .map(|c| prior.prob_at(c.members[0].lon, c.members[0].lat).map(|p| -logit(p)))
        .collect::<Result<Vec<f64>>>()?;
    let y: Vec<bool> = multi.iter().map(|c| c.is_foreshock).collect();
    let orders: Vec<usize> = match order {
        OrderSelection::Fixed(k) if (1..=3).contains(&k) => vec![k],
        OrderSelection::Fixed(k) => return Err(invalid(format!("polynomial degree {k} is outside 1..=3"))),
        OrderSelection::Aic => vec![1, 2, 3],
    };
    let mut fits: Vec<ForeshockFit> = orders
        .iter()
        .map(|&k| {
            let rows: Vec<Vec<f64>> = multi.iter().map(|c| design_row(&c.members, k)).collect();
            fit_order(&rows, &y, &offset, k, &prior, labeled.len())
        })
        .collect();
    let table: Vec<(usize, f64)> = fits.iter().map(|f| (f.order, f.aic)).collect();
    let best = fits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.aic.total_cmp(&b.1.aic))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut fit = fits.swap_remove(best);
    fit.aic_by_order = table;
    Ok(fit)
}
