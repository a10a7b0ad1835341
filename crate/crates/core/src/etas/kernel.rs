//! Vectorizable history sums over power-law triggering kernels.
//!
//! On x86-64 the loops are compiled a second time with AVX2/FMA enabled and
//! selected at run time. Lane partial sums are combined in a fixed order, so
//! results are deterministic for a given build and CPU feature set.

use crate::numerics::fastmath;

const LANES: usize = 4;

/// Indices of the accumulated sums in [`PairSums`].
pub(crate) mod idx {
    pub const G: usize = 0;
    pub const G_INV: usize = 1;
    pub const G_INV2: usize = 2;
    pub const G_M: usize = 3;
    pub const G_M_INV: usize = 4;
    pub const G_M2: usize = 5;
    pub const G_L: usize = 6;
    pub const G_L_INV: usize = 7;
    pub const G_L2: usize = 8;
    pub const G_ML: usize = 9;
}

/// Σ g, Σ g/x, Σ g/x², Σ g·m, Σ g·m/x, Σ g·m², Σ g·L, Σ g·L/x, Σ g·L², Σ g·m·L
/// with x = t − tⱼ + c, L = ln x and g = wⱼ·x^(−p).
pub(crate) type PairSums = [f64; 10];

#[inline(always)]
fn value_body(t: f64, times: &[f64], w: &[f64], c: f64, p: f64) -> f64 {
    let n = times.len().min(w.len());
    let (times, w) = (&times[..n], &w[..n]);
    let mut acc = [0.0; LANES];
    let tc = times.chunks_exact(LANES);
    let wc = w.chunks_exact(LANES);
    let (tr, wr) = (tc.remainder(), wc.remainder());
    for (tt, ww) in tc.zip(wc) {
        for l in 0..LANES {
            let x = t - tt[l] + c;
            acc[l] += ww[l] * fastmath::exp(-p * fastmath::ln(x));
        }
    }
    let mut tail = 0.0;
    for (tj, wj) in tr.iter().zip(wr) {
        let x = t - tj + c;
        tail += wj * fastmath::exp(-p * fastmath::ln(x));
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

#[inline(always)]
fn sums_body(t: f64, times: &[f64], w: &[f64], m: &[f64], c: f64, p: f64) -> PairSums {
    let n = times.len().min(w.len()).min(m.len());
    let (times, w, m) = (&times[..n], &w[..n], &m[..n]);
    let mut acc = [[0.0; LANES]; 10];
    let tc = times.chunks_exact(LANES);
    let wc = w.chunks_exact(LANES);
    let mc = m.chunks_exact(LANES);
    let (tr, wr, mr) = (tc.remainder(), wc.remainder(), mc.remainder());
    for ((tt, ww), mm) in tc.zip(wc).zip(mc) {
        for l in 0..LANES {
            let x = t - tt[l] + c;
            let lx = fastmath::ln(x);
            let g = ww[l] * fastmath::exp(-p * lx);
            let inv = 1.0 / x;
            let gi = g * inv;
            let gm = g * mm[l];
            let gl = g * lx;
            acc[0][l] += g;
            acc[1][l] += gi;
            acc[2][l] += gi * inv;
            acc[3][l] += gm;
            acc[4][l] += gm * inv;
            acc[5][l] += gm * mm[l];
            acc[6][l] += gl;
            acc[7][l] += gl * inv;
            acc[8][l] += gl * lx;
            acc[9][l] += gm * lx;
        }
    }
    let mut out = [0.0; 10];
    for k in 0..10 {
        out[k] = (acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3]);
    }
    let mut tail = [0.0; 10];
    for ((tj, wj), mj) in tr.iter().zip(wr).zip(mr) {
        let x = t - tj + c;
        let lx = fastmath::ln(x);
        let g = wj * fastmath::exp(-p * lx);
        let inv = 1.0 / x;
        let gi = g * inv;
        let gm = g * mj;
        let gl = g * lx;
        tail[0] += g;
        tail[1] += gi;
        tail[2] += gi * inv;
        tail[3] += gm;
        tail[4] += gm * inv;
        tail[5] += gm * mj;
        tail[6] += gl;
        tail[7] += gl * inv;
        tail[8] += gl * lx;
        tail[9] += gm * lx;
    }
    for k in 0..10 {
        out[k] += tail[k];
    }
    out
}

/// Σ wⱼ·G(t − tⱼ + c) with G(y) = (y^q − 1)/q (ln y at q = 0), q = 1 − p.
#[inline(always)]
fn antiderivative_body(t: f64, times: &[f64], w: &[f64], c: f64, q: f64) -> f64 {
    let n = times.len().min(w.len());
    let (times, w) = (&times[..n], &w[..n]);
    let series = q.abs() < 1e-3;
    let g = |x: f64| {
        let l = fastmath::ln(x);
        if series {
            let z = q * l;
            l * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z / 720.0)))))
        } else {
            (fastmath::exp(q * l) - 1.0) / q
        }
    };
    let mut acc = [0.0; LANES];
    let tc = times.chunks_exact(LANES);
    let wc = w.chunks_exact(LANES);
    let (tr, wr) = (tc.remainder(), wc.remainder());
    for (tt, ww) in tc.zip(wc) {
        for l in 0..LANES {
            acc[l] += ww[l] * g(t - tt[l] + c);
        }
    }
    let mut tail = 0.0;
    for (tj, wj) in tr.iter().zip(wr) {
        tail += wj * g(t - tj + c);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::*;

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn value(t: f64, times: &[f64], w: &[f64], c: f64, p: f64) -> f64 {
        value_body(t, times, w, c, p)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn antiderivative(t: f64, times: &[f64], w: &[f64], c: f64, q: f64) -> f64 {
        antiderivative_body(t, times, w, c, q)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn all_values(times: &[f64], w: &[f64], targets: &[(f64, usize)], c: f64, p: f64, out: &mut [f64]) {
        for (o, &(t, k)) in out.iter_mut().zip(targets) {
            *o = value_body(t, &times[..k], &w[..k], c, p);
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn all_sums(
        times: &[f64],
        w: &[f64],
        m: &[f64],
        targets: &[(f64, usize)],
        c: f64,
        p: f64,
        out: &mut [PairSums],
    ) {
        for (o, &(t, k)) in out.iter_mut().zip(targets) {
            *o = sums_body(t, &times[..k], &w[..k], &m[..k], c, p);
        }
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

/// Σⱼ wⱼ (t − tⱼ + c)^(−p) over the given history.
pub(crate) fn kernel_value(t: f64, times: &[f64], w: &[f64], c: f64, p: f64) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at run time.
        return unsafe { avx::value(t, times, w, c, p) };
    }
    value_body(t, times, w, c, p)
}

/// Σⱼ wⱼ·G(t − tⱼ + c), G the antiderivative of y^(−p) vanishing at y = 1.
pub(crate) fn kernel_antiderivative(t: f64, times: &[f64], w: &[f64], c: f64, p: f64) -> f64 {
    let q = 1.0 - p;
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at run time.
        return unsafe { avx::antiderivative(t, times, w, c, q) };
    }
    antiderivative_body(t, times, w, c, q)
}

/// Kernel values for every target `(t, history_len)`.
pub(crate) fn all_values(times: &[f64], w: &[f64], targets: &[(f64, usize)], c: f64, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; targets.len()];
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at run time.
        unsafe { avx::all_values(times, w, targets, c, p, &mut out) };
        return out;
    }
    for (o, &(t, k)) in out.iter_mut().zip(targets) {
        *o = value_body(t, &times[..k], &w[..k], c, p);
    }
    out
}

/// Derivative sums for every target `(t, history_len)`.
pub(crate) fn all_sums(
    times: &[f64],
    w: &[f64],
    m: &[f64],
    targets: &[(f64, usize)],
    c: f64,
    p: f64,
) -> Vec<PairSums> {
    let mut out = vec![[0.0; 10]; targets.len()];
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at run time.
        unsafe { avx::all_sums(times, w, m, targets, c, p, &mut out) };
        return out;
    }
    for (o, &(t, k)) in out.iter_mut().zip(targets) {
        *o = sums_body(t, &times[..k], &w[..k], &m[..k], c, p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let times: Vec<f64> = (0..37).map(|i| i as f64 * 0.731 + (i as f64 * 0.37).sin()).collect();
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let m: Vec<f64> = (0..37).map(|i| (i % 7) as f64 * 0.3).collect();
        let w: Vec<f64> = m.iter().map(|m| (1.1 * m).exp()).collect();
        (times, w, m)
    }

    #[test]
    fn sums_match_direct_evaluation() {
        let (times, w, m) = history();
        let (t, c, p) = (40.0, 0.03, 1.15);
        let s = sums_body(t, &times, &w, &m, c, p);
        let mut d = [0.0; 10];
        for j in 0..times.len() {
            let x: f64 = t - times[j] + c;
            let l = x.ln();
            let g = w[j] * x.powf(-p);
            let vals = [g, g / x, g / (x * x), g * m[j], g * m[j] / x, g * m[j] * m[j], g * l, g * l / x, g * l * l, g * m[j] * l];
            for k in 0..10 {
                d[k] += vals[k];
            }
        }
        for k in 0..10 {
            assert!((s[k] - d[k]).abs() <= 1e-13 * d[k].abs().max(1.0), "sum {k}");
        }
        let v = kernel_value(t, &times, &w, c, p);
        assert!((v - d[0]).abs() <= 1e-13 * d[0]);
        assert_eq!(all_values(&times, &w, &[(t, times.len())], c, p)[0], v);
        let batch = all_sums(&times, &w, &m, &[(t, times.len())], c, p)[0];
        for k in 0..10 {
            assert!((batch[k] - s[k]).abs() <= 1e-13 * s[k].abs().max(1.0), "batched sum {k}");
        }
    }

    #[test]
    fn antiderivative_matches_closed_form() {
        let (times, w, _) = history();
        let t = 45.0;
        for &(c, p) in &[(0.02, 1.1), (0.02, 1.0), (0.5, 0.9999), (0.1, 1.5)] {
            let got = kernel_antiderivative(t, &times, &w, c, p);
            let want: f64 = times
                .iter()
                .zip(&w)
                .map(|(tj, wj)| {
                    let y: f64 = t - tj + c;
                    if p == 1.0 {
                        wj * y.ln()
                    } else {
                        wj * (y.powf(1.0 - p) - 1.0) / (1.0 - p)
                    }
                })
                .sum();
            assert!((got - want).abs() < 1e-11 * want.abs().max(1.0), "c={c} p={p}");
        }
    }
}
