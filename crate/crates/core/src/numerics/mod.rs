//! Shared numerical kernel: optimization, quadrature and normal-law
//! special functions used by every fitting module.

pub mod fastmath;
pub mod optimize;
pub mod quadrature;
pub mod special;

pub use optimize::{
    minimize, minimize_bfgs, minimize_newton, minimize_with, standard_errors, Bound,
    MinimizeOptions, OptimResult, SecondOrder,
};
pub use quadrature::{
    gauss_legendre, integrate, integrate_2d, integrate_2d_panels, integrate_detailed,
    integrate_panels, QuadratureResult,
};
pub use special::{
    erfcx, kolmogorov_pvalue, ks_uniform_statistic, ln_std_normal_cdf, std_normal_cdf,
    std_normal_pdf,
};

/// ∫ₐᵇ (s + c)^(−p) ds together with its partial derivatives, in closed form.
///
/// Stable through p = 1, where the antiderivative switches to a logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawIntegral {
    pub value: f64,
    pub d_c: f64,
    pub d_p: f64,
    pub d_cc: f64,
    pub d_cp: f64,
    pub d_pp: f64,
}

/// φ₀(z) = (eᶻ − 1)/z, φ₁(z) = ∫₀¹ s e^{zs} ds, φ₂(z) = ∫₀¹ s² e^{zs} ds.
fn phi_series(z: f64) -> (f64, f64, f64) {
    if z.abs() < 0.5 {
        let mut term = 1.0; // z^k / k!
        let (mut p0, mut p1, mut p2) = (0.0, 0.0, 0.0);
        for k in 0..30 {
            let kf = k as f64;
            p0 += term / (kf + 1.0);
            p1 += term / (kf + 2.0);
            p2 += term / (kf + 3.0);
            term *= z / (kf + 1.0);
            if term.abs() < 1e-18 {
                break;
            }
        }
        (p0, p1, p2)
    } else {
        let e = z.exp();
        let p0 = z.exp_m1() / z;
        let p1 = (e * (z - 1.0) + 1.0) / (z * z);
        let p2 = (e * (z * z - 2.0 * z + 2.0) - 2.0) / (z * z * z);
        (p0, p1, p2)
    }
}

/// G(y) = ∫₁ʸ u^(−p) du and its first two derivatives in q = 1 − p.
fn power_antiderivative(y: f64, p: f64) -> (f64, f64, f64) {
    let l = y.ln();
    let q = 1.0 - p;
    let (p0, p1, p2) = phi_series(q * l);
    (l * p0, l * l * p1, l * l * l * p2)
}

/// Closed-form ∫ₐᵇ (s + c)^(−p) ds for 0 ≤ a ≤ b, c > 0.
pub fn power_law_integral(a: f64, b: f64, c: f64, p: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (gb, _, _) = power_antiderivative(b + c, p);
    let (ga, _, _) = power_antiderivative(a + c, p);
    gb - ga
}

/// [`power_law_integral`] with first and second derivatives in (c, p).
pub fn power_law_integral_derivs(a: f64, b: f64, c: f64, p: f64) -> PowerLawIntegral {
    if b <= a {
        return PowerLawIntegral {
            value: 0.0,
            d_c: 0.0,
            d_p: 0.0,
            d_cc: 0.0,
            d_cp: 0.0,
            d_pp: 0.0,
        };
    }
    let (yb, ya) = (b + c, a + c);
    let (gb, gb1, gb2) = power_antiderivative(yb, p);
    let (ga, ga1, ga2) = power_antiderivative(ya, p);
    let (lb, la) = (yb.ln(), ya.ln());
    let (pb, pa) = ((-p * lb).exp(), (-p * la).exp());
    PowerLawIntegral {
        value: gb - ga,
        d_c: pb - pa,
        // d/dp = −d/dq
        d_p: -(gb1 - ga1),
        d_cc: -p * (pb / yb - pa / ya),
        d_cp: -(lb * pb - la * pa),
        d_pp: gb2 - ga2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_integral_matches_quadrature() {
        for &p in &[0.8, 0.999_999_999, 1.0, 1.000_000_01, 1.2, 2.5] {
            for &(a, b, c) in &[(0.0, 10.0, 0.01), (3.0, 1000.0, 0.5), (0.0, 1e4, 0.02)] {
                let closed = power_law_integral(a, b, c, p);
                let quad = integrate_panels(|s| (s + c).powf(-p), a, b, 1e-13, 64).unwrap();
                assert!(((closed - quad) / quad).abs() < 1e-10, "p={p} a={a} b={b}");
            }
        }
    }

    #[test]
    fn power_integral_derivatives_match_differences() {
        let (a, b) = (0.5, 200.0);
        for &(c, p) in &[(0.02, 1.1), (0.3, 1.0), (0.05, 0.9)] {
            let d = power_law_integral_derivs(a, b, c, p);
            let h = 1e-5;
            let fc = |c: f64, p: f64| power_law_integral(a, b, c, p);
            let dc = (fc(c + h * c, p) - fc(c - h * c, p)) / (2.0 * h * c);
            let dp = (fc(c, p + h) - fc(c, p - h)) / (2.0 * h);
            let dpp = (fc(c, p + h) - 2.0 * fc(c, p) + fc(c, p - h)) / (h * h);
            let dcp = (fc(c + h * c, p + h) - fc(c + h * c, p - h) - fc(c - h * c, p + h)
                + fc(c - h * c, p - h))
                / (4.0 * h * h * c);
            let eps = |x: f64, y: f64| (x - y).abs() / (1.0 + y.abs());
            assert!(eps(d.d_c, dc) < 1e-6);
            assert!(eps(d.d_p, dp) < 1e-6);
            assert!(eps(d.d_pp, dpp) < 1e-3);
            assert!(eps(d.d_cp, dcp) < 1e-3);
            let dcc = (d.d_c - power_law_integral_derivs(a, b, c * (1.0 - h), p).d_c) / (h * c);
            assert!(eps(d.d_cc, dcc) < 1e-3);
        }
    }
}
