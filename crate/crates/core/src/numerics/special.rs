//! Normal-distribution special functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};


/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density φ(x).
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Scaled complementary error function `exp(y²)·erfc(y)`, accurate for large `y`.
pub fn erfcx(y: f64) -> f64 {
    if y < 26.0 {
        return (y * y).exp() * libm::erfc(y);
    }
    // Asymptotic expansion: 1/(y√π) Σ (-1)^k (2k-1)!! / (2y²)^k
    let inv = 1.0 / (2.0 * y * y);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..10 {
        term *= -((2 * k - 1) as f64) * inv;
        sum += term;
    }
    sum / (y * PI.sqrt())
}

/// ln Φ(x), stable far into the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-std_normal_cdf(-x)).ln_1p()
    } else if x > -5.0 {
        std_normal_cdf(x).ln()
    } else {
        (0.5 * erfcx(-x * FRAC_1_SQRT_2)).ln() - 0.5 * x * x
    }
}

/// Two-sided Kolmogorov–Smirnov p-value for statistic `d` from `n` samples.
///
/// Uses the asymptotic Kolmogorov series with Stephens' finite-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS distance between the empirical distribution of `samples` and
/// the uniform law on `[0, upper]`.
pub fn ks_uniform_statistic(samples: &[f64], upper: f64) -> f64 {
    let n = samples.len();
    if n == 0 || upper <= 0.0 {
        return 0.0;
    }
    let mut sorted: Vec<f64> = samples.iter().map(|v| v / upper).collect();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            let above = (i + 1) as f64 / nf - u;
            let below = u - i as f64 / nf;
            above.max(below)
        })
        .fold(0.0, f64::max)
}
