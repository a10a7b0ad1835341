//! Unconstrained minimization over reparameterized coordinates.
//!
//! Every routine works in an internal coordinate `z` where each model
//! parameter `x` is mapped through its [`Bound`]: positive parameters are
//! log-transformed, lower-bounded ones are shifted logs and intervals use a
//! logistic map. Hessians and standard errors are reported in model units.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Admissible range of a single parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Free,
    /// x > 0, optimized as ln x.
    Positive,
    /// x > lo, optimized as ln(x − lo).
    Lower(f64),
    /// lo < x < hi, optimized through a logistic map.
    Interval(f64, f64),
}

impl Bound {
    fn validate(&self) -> Result<()> {
        match *self {
            Bound::Interval(lo, hi) if !(lo < hi) => Err(Error::InvalidInput(format!(
                "inconsistent bound: lo = {lo} must be < hi = {hi}"
            ))),
            Bound::Lower(lo) if !lo.is_finite() => {
                Err(Error::InvalidInput("lower bound must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    fn to_internal(&self, x: f64) -> Result<f64> {
        let z = match *self {
            Bound::Free => x,
            Bound::Positive => {
                if x <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "starting value {x} violates positivity"
                    )));
                }
                x.ln()
            }
            Bound::Lower(lo) => {
                if x <= lo {
                    return Err(Error::InvalidInput(format!(
                        "starting value {x} is not above {lo}"
                    )));
                }
                (x - lo).ln()
            }
            Bound::Interval(lo, hi) => {
                if x <= lo || x >= hi {
                    return Err(Error::InvalidInput(format!(
                        "starting value {x} is outside ({lo}, {hi})"
                    )));
                }
                let s = (x - lo) / (hi - lo);
                (s / (1.0 - s)).ln()
            }
        };
        Ok(z)
    }

    fn to_model(&self, z: f64) -> f64 {
        match *self {
            Bound::Free => z,
            Bound::Positive => z.exp(),
            Bound::Lower(lo) => lo + z.exp(),
            Bound::Interval(lo, hi) => lo + (hi - lo) / (1.0 + (-z).exp()),
        }
    }

    /// dx/dz and d²x/dz².
    fn derivatives(&self, z: f64) -> (f64, f64) {
        match *self {
            Bound::Free => (1.0, 0.0),
            Bound::Positive | Bound::Lower(_) => {
                let e = z.exp();
                (e, e)
            }
            Bound::Interval(lo, hi) => {
                let s = 1.0 / (1.0 + (-z).exp());
                let d1 = (hi - lo) * s * (1.0 - s);
                (d1, d1 * (1.0 - 2.0 * s))
            }
        }
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x_opt: Vec<f64>,
    pub f_opt: f64,
    pub n_eval: usize,
    pub converged: bool,
    /// Hessian of the objective in model units at `x_opt`.
    pub hessian_approx: DMatrix<f64>,
    /// False when the Hessian could not be Cholesky-factorized.
    pub hessian_pd: bool,
}

impl OptimResult {
    /// Square roots of the diagonal of the inverse Hessian; NaN when the
    /// Hessian is not positive definite.
    pub fn standard_errors(&self) -> Vec<f64> {
        standard_errors(&self.hessian_approx)
    }
}

/// Standard errors from an observed-information matrix.
pub fn standard_errors(hessian: &DMatrix<f64>) -> Vec<f64> {
    let n = hessian.nrows();
    if !hessian.iter().all(|v| v.is_finite()) {
        return vec![f64::NAN; n];
    }
    match hessian.clone().cholesky() {
        Some(chol) => {
            let inv = chol.inverse();
            (0..n).map(|i| inv[(i, i)].max(0.0).sqrt()).collect()
        }
        None => vec![f64::NAN; n],
    }
}

/// Tuning knobs shared by the minimizers.
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Relative objective tolerance.
    pub tol: f64,
    pub max_eval: usize,
    /// Simplex restarts after the first convergence.
    pub restarts: usize,
    /// Initial simplex edge per coordinate, in internal units.
    pub initial_step: Option<Vec<f64>>,
    /// Run the quasi-Newton stage after the simplex.
    pub polish: bool,
    pub compute_hessian: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_eval: 20_000,
            restarts: 2,
            initial_step: None,
            polish: true,
            compute_hessian: true,
        }
    }
}

impl MinimizeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

struct Transform<'a> {
    bounds: &'a [Bound],
}

impl Transform<'_> {
    fn model(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.bounds)
            .map(|(&z, b)| b.to_model(z))
            .collect()
    }

    fn internal(&self, x: &[f64]) -> Result<Vec<f64>> {
        x.iter()
            .zip(self.bounds)
            .map(|(&x, b)| b.to_internal(x))
            .collect()
    }

    fn jacobian(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        z.iter()
            .zip(self.bounds)
            .map(|(&z, b)| b.derivatives(z))
            .unzip()
    }
}

fn setup<'a>(x0: &[f64], bounds: &'a [Bound]) -> Result<(Transform<'a>, Vec<f64>)> {
    if x0.len() != bounds.len() {
        return Err(Error::InvalidInput(format!(
            "{} starting values but {} bounds",
            x0.len(),
            bounds.len()
        )));
    }
    if x0.is_empty() {
        return Err(Error::InvalidInput("empty parameter vector".into()));
    }
    for b in bounds {
        b.validate()?;
    }
    let t = Transform { bounds };
    let z0 = t.internal(x0)?;
    Ok((t, z0))
}

fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Minimizes `objective` from `x0` with default options and relative tolerance `tol`.
///
/// Derivative-free simplex search with restarts, followed by a BFGS polish
/// using finite-difference gradients.
pub fn minimize<F>(objective: F, x0: &[f64], bounds: &[Bound], tol: f64) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    minimize_with(objective, x0, bounds, &MinimizeOptions::with_tol(tol))
}

/// [`minimize`] with explicit options.
pub fn minimize_with<F>(
    objective: F,
    x0: &[f64],
    bounds: &[Bound],
    opts: &MinimizeOptions,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    let (t, z0) = setup(x0, bounds)?;
    let mut n_eval = 0usize;
    let fz = |z: &[f64], n: &mut usize| {
        *n += 1;
        sanitize(objective(&t.model(z)))
    };
    let f0 = fz(&z0, &mut n_eval);
    if !f0.is_finite() {
        return Err(Error::InvalidStart);
    }

    let dim = z0.len();
    let steps: Vec<f64> = match &opts.initial_step {
        Some(s) if s.len() == dim => s.clone(),
        _ => z0
            .iter()
            .zip(bounds)
            .map(|(&z, b)| match b {
                Bound::Free => {
                    if z.abs() > 1e-8 {
                        0.05 * z.abs()
                    } else {
                        0.00025
                    }
                }
                _ => 0.1_f64.max(0.05 * z.abs()),
            })
            .collect(),
    };

    let budget = opts.max_eval.max(10 * dim);
    let mut best = (z0.clone(), f0);
    let mut nm_converged = false;
    for round in 0..=opts.restarts {
        let scale = if round == 0 { 1.0 } else { 0.5 };
        let step: Vec<f64> = steps.iter().map(|s| s * scale).collect();
        let remaining = budget.saturating_sub(n_eval);
        if remaining < 2 * dim + 2 {
            break;
        }
        let (z, f, conv) = nelder_mead(
            |z| fz(z, &mut n_eval),
            &best.0,
            best.1,
            &step,
            opts.tol,
            remaining,
        );
        let improvement = best.1 - f;
        if f <= best.1 {
            best = (z, f);
        }
        nm_converged = conv;
        if round > 0 && improvement.abs() <= opts.tol * (1.0 + best.1.abs()) {
            break;
        }
    }

    let mut converged = nm_converged;
    if opts.polish {
        let (z, f, conv, used) = bfgs(
            |z| {
                let n = std::cell::Cell::new(0usize);
                let eval = |zz: &[f64]| {
                    let mut k = 0;
                    let v = fz(zz, &mut k);
                    n.set(n.get() + k);
                    v
                };
                let v = eval(z);
                let g = fd_gradient(&eval, z, v);
                (v, g, n.get())
            },
            &best.0,
            opts.tol,
            400,
        );
        n_eval += used;
        if f <= best.1 {
            if conv || (best.1 - f) > 0.0 {
                converged = converged || conv;
            }
            best = (z, f);
        }
        converged = converged || conv;
    }

    let (hessian, pd) = if opts.compute_hessian {
        let n = std::cell::Cell::new(0usize);
        let eval = |z: &[f64]| {
            let mut k = 0;
            let v = fz(z, &mut k);
            n.set(n.get() + k);
            v
        };
        let h = fd_hessian_model(&eval, &t, &best.0, best.1);
        n_eval += n.get();
        h
    } else {
        (DMatrix::zeros(dim, dim), false)
    };

    Ok(OptimResult {
        x_opt: t.model(&best.0),
        f_opt: best.1,
        n_eval,
        converged,
        hessian_approx: hessian,
        hessian_pd: pd,
    })
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    z0: &[f64],
    f0: f64,
    step: &[f64],
    tol: f64,
    max_eval: usize,
) -> (Vec<f64>, f64, bool) {
    let n = z0.len();
    let nf = n as f64;
    // Dimension-adaptive coefficients.
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    verts.push(z0.to_vec());
    vals.push(f0);
    let mut evals = 0usize;
    for i in 0..n {
        let mut v = z0.to_vec();
        v[i] += step[i];
        let mut fv = f(&v);
        evals += 1;
        if !fv.is_finite() {
            v[i] = z0[i] - step[i];
            fv = f(&v);
            evals += 1;
        }
        verts.push(v);
        vals.push(fv);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut converged = false;
    while evals < max_eval {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];

        let f_spread = vals[worst] - vals[best];
        let x_spread = verts
            .iter()
            .flat_map(|v| v.iter().zip(&verts[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread.is_finite()
            && f_spread <= tol * (1.0 + vals[best].abs())
            && x_spread <= tol.sqrt().max(1e-10)
        {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for &idx in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&verts[idx]) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= nf;
        }
        let point = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&verts[worst])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = point(alpha);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[best] {
            let xe = point(alpha * gamma);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                verts[worst] = xe;
                vals[worst] = fe;
            } else {
                verts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            verts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[worst] {
            let xc = point(alpha * rho);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = point(-rho);
            let fc = f(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < vals[worst].min(fr) {
            verts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = verts[best].clone();
        for &idx in &order[1..] {
            let v: Vec<f64> = verts[idx]
                .iter()
                .zip(&anchor)
                .map(|(v, a)| a + sigma * (v - a))
                .collect();
            vals[idx] = f(&v);
            verts[idx] = v;
            evals += 1;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)))
        .expect("non-empty simplex");
    (verts[best].clone(), vals[best], converged)
}

fn fd_step(z: f64, power: f64) -> f64 {
    f64::EPSILON.powf(power) * (1.0 + z.abs())
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64], fz: f64) -> Vec<f64> {
    let mut work = z.to_vec();
    (0..z.len())
        .map(|i| {
            let h = fd_step(z[i], 1.0 / 3.0);
            work[i] = z[i] + h;
            let fp = f(&work);
            work[i] = z[i] - h;
            let fm = f(&work);
            work[i] = z[i];
            if fp.is_finite() && fm.is_finite() {
                (fp - fm) / (2.0 * h)
            } else if fp.is_finite() {
                (fp - fz) / h
            } else if fm.is_finite() {
                (fz - fm) / h
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Hessian in internal coordinates by central second differences.
fn fd_hessian_internal<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64], fz: f64) -> DMatrix<f64> {
    let n = z.len();
    let h: Vec<f64> = z.iter().map(|&v| fd_step(v, 0.25)).collect();
    let mut hess = DMatrix::zeros(n, n);
    let mut work = z.to_vec();
    for i in 0..n {
        work[i] = z[i] + h[i];
        let fp = f(&work);
        work[i] = z[i] - h[i];
        let fm = f(&work);
        work[i] = z[i];
        hess[(i, i)] = (fp - 2.0 * fz + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                work[i] = z[i] + si * h[i];
                work[j] = z[j] + sj * h[j];
                let v = f(&work);
                work[i] = z[i];
                work[j] = z[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Converts an internal-coordinate Hessian and gradient to model units.
fn hessian_to_model(t: &Transform, z: &[f64], hz: &DMatrix<f64>, gz: &[f64]) -> DMatrix<f64> {
    let (d1, d2) = t.jacobian(z);
    let n = z.len();
    let mut hx = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = hz[(i, j)];
            if i == j {
                let gx = gz[i] / d1[i];
                v -= gx * d2[i];
            }
            hx[(i, j)] = v / (d1[i] * d1[j]);
        }
    }
    symmetrize(&mut hx);
    hx
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn fd_hessian_model<F: Fn(&[f64]) -> f64>(
    f: &F,
    t: &Transform,
    z: &[f64],
    fz: f64,
) -> (DMatrix<f64>, bool) {
    let hz = fd_hessian_internal(f, z, fz);
    let gz = fd_gradient(f, z, fz);
    let hx = hessian_to_model(t, z, &hz, &gz);
    let pd = hx.iter().all(|v| v.is_finite()) && hx.clone().cholesky().is_some();
    (hx, pd)
}

/// BFGS in internal coordinates. `fg` returns (value, gradient, evaluations used).
fn bfgs<F>(fg: F, z0: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64, bool, usize)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>, usize),
{
    let n = z0.len();
    let (mut f, g, mut used) = fg(z0);
    let mut z = DVector::from_column_slice(z0);
    let mut g = DVector::from_vec(g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return (z0.to_vec(), f, false, used);
    }
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    let gtol = tol.sqrt().max(1e-12) * (1.0 + f.abs()).sqrt();
    let mut converged = false;
    let mut stall = 0;
    for _ in 0..max_iter {
        if g.amax() <= gtol {
            converged = true;
            break;
        }
        let mut dir = -(&inv_h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            inv_h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &z + &dir * step;
            let (ft, gt, u) = fg(trial.as_slice());
            used += u;
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            step *= 0.5;
        }
        let Some((z_new, f_new, g_new)) = accepted else {
            if inv_h != DMatrix::identity(n, n) {
                inv_h = DMatrix::identity(n, n);
                continue;
            }
            break;
        };
        let s = &z_new - &z;
        let y = &g_new - &g;
        let df = f - f_new;
        z = z_new;
        g = g_new;
        f = f_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - (&s * y.transpose()) * rho;
            let right = &i - (&y * s.transpose()) * rho;
            inv_h = &left * &inv_h * &right + (&s * s.transpose()) * rho;
        }
        if df <= tol * (1.0 + f.abs()) {
            stall += 1;
            if stall >= 3 {
                converged = g.amax() <= gtol * 1e3;
                break;
            }
        } else {
            stall = 0;
        }
    }
    (z.as_slice().to_vec(), f, converged, used)
}

/// BFGS with an analytic gradient. `objective` returns the value and the
/// gradient in model units; `None` or a non-finite value marks an
/// inadmissible point.
pub fn minimize_bfgs<F>(
    objective: F,
    x0: &[f64],
    bounds: &[Bound],
    opts: &MinimizeOptions,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (t, z0) = setup(x0, bounds)?;
    let eval = |z: &[f64]| -> (f64, Vec<f64>, usize) {
        let x = t.model(z);
        match objective(&x) {
            Some((v, gx)) if v.is_finite() => {
                let (d1, _) = t.jacobian(z);
                let gz = gx.iter().zip(&d1).map(|(g, d)| g * d).collect();
                (v, gz, 1)
            }
            _ => (f64::INFINITY, vec![f64::NAN; z.len()], 1),
        }
    };
    let (f0, _, _) = eval(&z0);
    if !f0.is_finite() {
        return Err(Error::InvalidStart);
    }
    let (z, f, converged, n_eval) = bfgs(eval, &z0, opts.tol, opts.max_eval.min(2000));
    let dim = z.len();
    let (hessian, pd) = if opts.compute_hessian {
        // Central differences of the analytic gradient.
        let mut hz = DMatrix::zeros(dim, dim);
        let (_, g_center, _) = eval(&z);
        let mut work = z.clone();
        for j in 0..dim {
            let h = fd_step(z[j], 1.0 / 3.0);
            work[j] = z[j] + h;
            let (_, gp, _) = eval(&work);
            work[j] = z[j] - h;
            let (_, gm, _) = eval(&work);
            work[j] = z[j];
            for i in 0..dim {
                hz[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let hx = hessian_to_model(&t, &z, &hz, &g_center);
        let pd = hx.iter().all(|v| v.is_finite()) && hx.clone().cholesky().is_some();
        (hx, pd)
    } else {
        (DMatrix::zeros(dim, dim), false)
    };
    Ok(OptimResult {
        x_opt: t.model(&z),
        f_opt: f,
        n_eval: n_eval + 2 * dim,
        converged,
        hessian_approx: hessian,
        hessian_pd: pd,
    })
}

/// Value, gradient and Hessian of an objective in model units.
pub type SecondOrder = (f64, Vec<f64>, DMatrix<f64>);

/// Damped Newton (Levenberg–Marquardt) iterations for objectives with an
/// analytic Hessian.
pub fn minimize_newton<F>(
    objective: F,
    x0: &[f64],
    bounds: &[Bound],
    opts: &MinimizeOptions,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Option<SecondOrder>,
{
    let (t, z0) = setup(x0, bounds)?;
    let dim = z0.len();
    let eval = |z: &[f64]| -> Option<(f64, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
        let x = t.model(z);
        let (v, gx, hx) = objective(&x)?;
        if !v.is_finite() || gx.iter().any(|g| !g.is_finite()) || hx.iter().any(|h| !h.is_finite())
        {
            return None;
        }
        let (d1, d2) = t.jacobian(z);
        let gz = DVector::from_iterator(dim, gx.iter().zip(&d1).map(|(g, d)| g * d));
        let mut hz = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                hz[(i, j)] = hx[(i, j)] * d1[i] * d1[j];
            }
            hz[(i, i)] += gx[i] * d2[i];
        }
        Some((v, gz, hz, DVector::from_vec(gx)))
    };

    let mut z = DVector::from_column_slice(&z0);
    let Some((mut f, mut gz, mut hz, _)) = eval(z.as_slice()) else {
        return Err(Error::InvalidStart);
    };
    let mut n_eval = 1;
    let mut damping = 1e-6;
    let mut converged = false;
    let max_iter = opts.max_eval.min(500);
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        let mut step = None;
        for _ in 0..60 {
            let mut a = hz.clone();
            let scale = hz.diagonal().map(|v| v.abs()).max().max(1e-12);
            for i in 0..dim {
                a[(i, i)] += damping * scale;
            }
            if let Some(chol) = a.cholesky() {
                step = Some(chol.solve(&(-&gz)));
                break;
            }
            damping = (damping * 10.0).max(1e-8);
        }
        let Some(delta) = step else {
            break;
        };
        let decrement = -gz.dot(&delta);
        if decrement.abs() <= opts.tol * (1.0 + f.abs()) && damping < 1e-2 {
            converged = true;
            break;
        }
        let trial = &z + &delta;
        n_eval += 1;
        match eval(trial.as_slice()) {
            Some((ft, gt, ht, _)) if ft <= f => {
                let df = f - ft;
                z = trial;
                f = ft;
                gz = gt;
                hz = ht;
                damping = (damping / 10.0).max(1e-12);
                if df <= opts.tol * 1e-2 * (1.0 + f.abs()) && delta.amax() < 1e-10 {
                    converged = true;
                    break;
                }
            }
            _ => {
                damping *= 10.0;
                if damping > 1e16 {
                    break;
                }
            }
        }
    }
    let (_, _, hz_final, gx_final) = eval(z.as_slice()).expect("accepted point is admissible");
    let gzv: Vec<f64> = {
        let (d1, _) = t.jacobian(z.as_slice());
        gx_final.iter().zip(&d1).map(|(g, d)| g * d).collect()
    };
    let hx = hessian_to_model(&t, z.as_slice(), &hz_final, &gzv);
    let pd = hx.clone().cholesky().is_some();
    Ok(OptimResult {
        x_opt: t.model(z.as_slice()),
        f_opt: f,
        n_eval,
        converged,
        hessian_approx: hx,
        hessian_pd: pd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_one_dimensional() {
        let r = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &[Bound::Free], 1e-12).unwrap();
        assert!((r.x_opt[0] - 3.0).abs() < 1e-6);
        assert!(r.converged);
        assert!((r.hessian_approx[(0, 0)] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn separable_quadratic() {
        let r = minimize(
            |x| x[0] * x[0] + 10.0 * x[1] * x[1],
            &[1.0, 1.0],
            &[Bound::Free, Bound::Free],
            1e-12,
        )
        .unwrap();
        assert!(r.x_opt[0].abs() < 1e-6 && r.x_opt[1].abs() < 1e-6);
        assert!(r.f_opt <= 11.0);
        let h = &r.hessian_approx;
        assert!((h[(0, 1)] - h[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock_with_positive_bounds() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[0.3, 2.0], &[Bound::Positive, Bound::Positive], 1e-12).unwrap();
        assert!((r.x_opt[0] - 1.0).abs() < 1e-5, "{:?}", r.x_opt);
        assert!((r.x_opt[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn interval_bound_is_respected() {
        let r = minimize(
            |x| (x[0] - 5.0).powi(2),
            &[0.5],
            &[Bound::Interval(0.0, 1.0)],
            1e-10,
        )
        .unwrap();
        assert!(r.x_opt[0] < 1.0 && r.x_opt[0] > 0.99);
    }

    #[test]
    fn invalid_start_and_bounds() {
        assert!(matches!(
            minimize(|_| f64::NAN, &[1.0], &[Bound::Free], 1e-8),
            Err(Error::InvalidStart)
        ));
        assert!(minimize(|x| x[0], &[1.0], &[Bound::Interval(2.0, 1.0)], 1e-8).is_err());
        assert!(minimize(|x| x[0], &[-1.0], &[Bound::Positive], 1e-8).is_err());
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let opts = MinimizeOptions {
            max_eval: 20,
            polish: false,
            restarts: 0,
            ..MinimizeOptions::default()
        };
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize_with(f, &[-1.2, 1.0], &[Bound::Free, Bound::Free], &opts).unwrap();
        assert!(!r.converged);
        assert!(r.f_opt <= f(&[-1.2, 1.0]));
    }

    #[test]
    fn permutation_equivariance() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + x[0] * x[1];
        let g = |x: &[f64]| f(&[x[1], x[0]]);
        let a = minimize(f, &[0.5, 0.5], &[Bound::Free, Bound::Free], 1e-12).unwrap();
        let b = minimize(g, &[0.5, 0.5], &[Bound::Free, Bound::Free], 1e-12).unwrap();
        assert!((a.x_opt[0] - b.x_opt[1]).abs() < 1e-6);
        assert!((a.x_opt[1] - b.x_opt[0]).abs() < 1e-6);
    }

    #[test]
    fn newton_and_bfgs_agree_with_simplex() {
        // f(x, y) = (ln x - 1)^2 + (x - y)^2 + y^2 on x > 0.
        let f = |x: &[f64]| (x[0].ln() - 1.0).powi(2) + (x[0] - x[1]).powi(2) + x[1] * x[1];
        let grad = |x: &[f64]| {
            vec![
                2.0 * (x[0].ln() - 1.0) / x[0] + 2.0 * (x[0] - x[1]),
                -2.0 * (x[0] - x[1]) + 2.0 * x[1],
            ]
        };
        let hess = |x: &[f64]| {
            let a = (2.0 - 2.0 * (x[0].ln() - 1.0)) / (x[0] * x[0]) + 2.0;
            DMatrix::from_row_slice(2, 2, &[a, -2.0, -2.0, 4.0])
        };
        let bounds = [Bound::Positive, Bound::Free];
        let nm = minimize(f, &[1.0, 0.0], &bounds, 1e-12).unwrap();
        let bf = minimize_bfgs(
            |x| Some((f(x), grad(x))),
            &[1.0, 0.0],
            &bounds,
            &MinimizeOptions::with_tol(1e-12),
        )
        .unwrap();
        let nt = minimize_newton(
            |x| Some((f(x), grad(x), hess(x))),
            &[1.0, 0.0],
            &bounds,
            &MinimizeOptions::with_tol(1e-12),
        )
        .unwrap();
        for r in [&bf, &nt] {
            assert!((r.x_opt[0] - nm.x_opt[0]).abs() < 1e-5, "{:?} {:?}", r.x_opt, nm.x_opt);
            assert!((r.x_opt[1] - nm.x_opt[1]).abs() < 1e-5);
            assert!(r.hessian_pd);
        }
        let exact = hess(&nt.x_opt);
        for (a, b) in nm.hessian_approx.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-3 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn non_pd_hessian_gives_nan_errors() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(standard_errors(&h).iter().all(|v| v.is_nan()));
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let se = standard_errors(&h);
        assert!((se[0] - 0.5).abs() < 1e-12 && (se[1] - 1.0).abs() < 1e-12);
    }
}
