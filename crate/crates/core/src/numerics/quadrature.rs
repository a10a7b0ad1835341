//! Adaptive Gauss–Kronrod quadrature in one and two dimensions, plus
//! fixed Gauss–Legendre rules.

use std::cell::RefCell;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_059,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_114,
    0.562_757_134_668_604_683_339_000_099_272,
    0.433_395_394_129_247_190_799_265_943_165,
    0.294_392_862_701_460_198_131_126_603_103,
    0.148_874_338_981_631_210_884_826_001_129,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_244,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_325,
    0.123_491_976_262_065_851_077_208_245_815,
    0.134_709_217_311_473_325_928_054_001_771,
    0.142_775_938_577_060_080_797_094_273_138,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_389,
];

// 10-point Gauss weights at XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_657,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: f64,
    pub abs_error: f64,
    pub n_eval: usize,
}

fn kronrod21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(Error::Integration(format!(
            "non-finite integrand {fc} at x = {center}"
        )));
    }
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let f1 = f(x1);
        let f2 = f(x2);
        if !f1.is_finite() || !f2.is_finite() {
            let (x, v) = if f1.is_finite() { (x2, f2) } else { (x1, f1) };
            return Err(Error::Integration(format!(
                "non-finite integrand {v} at x = {x}"
            )));
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kronrod * half, ((kronrod - gauss) * half).abs()))
}

/// Adaptive integration of `f` over a finite interval split into
/// `panels` equal starting segments.
pub fn integrate_detailed<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> Result<QuadratureResult> {
    if a.is_nan() || b.is_nan() || a > b {
        return Err(Error::InvalidInput(format!(
            "integration limits must satisfy a <= b (got {a}, {b})"
        )));
    }
    if a == b {
        return Ok(QuadratureResult {
            value: 0.0,
            abs_error: 0.0,
            n_eval: 0,
        });
    }
    if a.is_infinite() || b.is_infinite() {
        return integrate_infinite(f, a, b, tol, panels);
    }
    integrate_finite(f, a, b, tol, panels)
}

fn integrate_finite<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> Result<QuadratureResult> {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut segments = Vec::with_capacity(panels * 4);
    for i in 0..panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == panels { b } else { lo + width };
        let (value, error) = kronrod21(&mut f, lo, hi)?;
        segments.push(Segment {
            a: lo,
            b: hi,
            value,
            error,
        });
    }
    let mut n_eval = 21 * panels;
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if err <= tol * (1.0 + total.abs()) {
            return Ok(QuadratureResult {
                value: total,
                abs_error: err,
                n_eval,
            });
        }
        if segments.len() >= MAX_SEGMENTS {
            if err <= 1e-6 * (1.0 + total.abs()) {
                // Roundoff floor reached well below any practical tolerance.
                return Ok(QuadratureResult {
                    value: total,
                    abs_error: err,
                    n_eval,
                });
            }
            return Err(Error::Integration(format!(
                "tolerance {tol:e} not reached after {MAX_SEGMENTS} subdivisions (error estimate {err:e})"
            )));
        }
        let (idx, worst) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, s)| (i, *s))
            .expect("at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Segment cannot be split further in floating point.
            return Ok(QuadratureResult {
                value: total,
                abs_error: err,
                n_eval,
            });
        }
        let (v1, e1) = kronrod21(&mut f, worst.a, mid)?;
        let (v2, e2) = kronrod21(&mut f, mid, worst.b)?;
        n_eval += 42;
        segments[idx] = Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segments.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
}

fn integrate_infinite<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> Result<QuadratureResult> {
    let upper_tail = |lo: f64, f: &mut F| {
        integrate_finite(
            |u: f64| {
                let one_minus = 1.0 - u;
                f(lo + u / one_minus) / (one_minus * one_minus)
            },
            0.0,
            1.0,
            tol,
            panels,
        )
    };
    match (a.is_infinite(), b.is_infinite()) {
        (false, true) => upper_tail(a, &mut f),
        (true, false) => integrate_finite(
            |u: f64| {
                let one_minus = 1.0 - u;
                f(b - u / one_minus) / (one_minus * one_minus)
            },
            0.0,
            1.0,
            tol,
            panels,
        ),
        _ => {
            let upper = upper_tail(0.0, &mut f)?;
            let lower = integrate_finite(
                |u: f64| {
                    let one_minus = 1.0 - u;
                    f(-u / one_minus) / (one_minus * one_minus)
                },
                0.0,
                1.0,
                tol,
                panels,
            )?;
            Ok(QuadratureResult {
                value: lower.value + upper.value,
                abs_error: lower.abs_error + upper.abs_error,
                n_eval: lower.n_eval + upper.n_eval,
            })
        }
    }
}

/// ∫ₐᵇ f(x) dx with error at most `tol·(1 + |result|)` for smooth `f`.
///
/// Either limit may be infinite; semi-infinite ranges are mapped onto
/// `[0, 1)` with `x = a + u/(1 − u)`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_detailed(f, a, b, tol, 1).map(|r| r.value)
}

/// Same as [`integrate`] but starting from `panels` equal sub-intervals,
/// which helps with sharply peaked integrands.
pub fn integrate_panels<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    panels: usize,
) -> Result<f64> {
    integrate_detailed(f, a, b, tol, panels).map(|r| r.value)
}

/// Iterated adaptive quadrature over the rectangle `[x0, x1] × [y0, y1]`.
pub fn integrate_2d<F: FnMut(f64, f64) -> f64>(
    f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    tol: f64,
) -> Result<f64> {
    integrate_2d_panels(f, x_range, y_range, tol, 1)
}

/// [`integrate_2d`] with `panels` starting sub-intervals per axis.
pub fn integrate_2d_panels<F: FnMut(f64, f64) -> f64>(
    f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    tol: f64,
    panels: usize,
) -> Result<f64> {
    let f = RefCell::new(f);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner_tol = tol * 0.1;
    let outer = integrate_detailed(
        |x| {
            let inner = integrate_detailed(
                |y| (f.borrow_mut())(x, y),
                y_range.0,
                y_range.1,
                inner_tol,
                panels,
            );
            match inner {
                Ok(r) => r.value,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        },
        x_range.0,
        x_range.1,
        tol,
        panels,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    outer.map(|r| r.value)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
