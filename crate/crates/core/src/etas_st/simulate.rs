//! Branching-process simulation of the space–time model with identity
//! shapes, used as a test oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use super::{BackgroundField, StEtasParams};
use crate::catalog::{Catalog, Event, Polygon, KM_PER_DEGREE};
use crate::error::{invalid, Error, Result};
use crate::magnitude::GrParams;
use crate::numerics::power_law_integral;

use crate::etas::MAX_SIMULATED_EVENTS;

/// Expected direct offspring of an event at latitude `lat` within `horizon`
/// days, averaged over M_c + Exp(β) magnitudes.
pub fn st_branching_ratio(params: &StEtasParams, beta: f64, lat: f64, horizon: f64) -> f64 {
    if beta <= params.alpha_m {
        return f64::INFINITY;
    }
    let jac = KM_PER_DEGREE * KM_PER_DEGREE * lat.to_radians().cos();
    params.k_prod * params.spatial_mass_km2(params.m_ref) / jac * beta / (beta - params.alpha_m)
        * power_law_integral(0.0, horizon, params.c_off, params.p_exp)
}

/// Offspring delay on [0, horizon] from the normalized Omori density.
fn sample_delay<R: Rng>(rng: &mut R, c: f64, p: f64, horizon: f64) -> f64 {
    let total = power_law_integral(0.0, horizon, c, p);
    let target = rng.gen::<f64>() * total;
    let q = 1.0 - p;
    let s = if q.abs() < 1e-9 {
        c * (target).exp() - c
    } else {
        (c.powf(q) + q * target).powf(1.0 / q) - c
    };
    s.clamp(0.0, horizon)
}

/// Simulates the space–time model on `window` with background `bg`.
///
/// Offspring are placed on the whole plane; events falling outside the grid
/// still trigger but are dropped from the returned catalog.
pub fn simulate_st_etas(
    params: &StEtasParams,
    bg: &BackgroundField,
    window: (f64, f64),
    gr: &GrParams,
    seed: u64,
) -> Result<Catalog> {
    params.validate()?;
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(invalid("window must satisfy t0 < t1"));
    }
    let (x0, x1, y0, y1) = bg.bounds;
    let lat_max = y0.abs().max(y1.abs());
    let ratio = st_branching_ratio(params, gr.beta, lat_max, t1 - t0);
    if !(ratio < 1.0) {
        return Err(Error::Supercritical { ratio });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = |rng: &mut ChaCha8Rng| -> f64 {
        let x: f64 = Exp1.sample(rng);
        params.m_ref + x / gr.beta
    };
    let draw_count = |rng: &mut ChaCha8Rng, mean: f64| -> u64 {
        if mean > 0.0 {
            Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        }
    };

    let mut events: Vec<Event> = Vec::new();
    let n_bg = draw_count(&mut rng, params.nu_scale * bg.integral() * (t1 - t0));
    let cum: Vec<f64> = bg
        .values
        .iter()
        .scan(0.0, |a, v| {
            *a += v;
            Some(*a)
        })
        .collect();
    let (dx, dy) = bg.cell();
    let last = *cum.last().unwrap_or(&0.0);
    for _ in 0..n_bg {
        let u = rng.gen::<f64>() * last;
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let (ix, iy) = (k % bg.nx, k / bg.nx);
        let lon = bg.bounds.0 + (ix as f64 + rng.gen::<f64>()) * dx;
        let lat = bg.bounds.2 + (iy as f64 + rng.gen::<f64>()) * dy;
        let t = t0 + rng.gen::<f64>() * (t1 - t0);
        events.push(Event::new(t, lon, lat, 0.0, mag(&mut rng)));
    }

    let (c, p, q, d) = (params.c_off, params.p_exp, params.q_exp, params.d_spread);
    let mut next = 0;
    while next < events.len() {
        let parent = events[next];
        next += 1;
        let kx = KM_PER_DEGREE * parent.lat.to_radians().cos();
        let jac = kx * KM_PER_DEGREE;
        let horizon = t1 - parent.t;
        let mean = params.k_prod * power_law_integral(0.0, horizon, c, p) * params.spatial_mass_km2(parent.mag) / jac;
        let scale = (params.alpha_m * (parent.mag - params.m_ref)).exp();
        for _ in 0..draw_count(&mut rng, mean) {
            let t = parent.t + sample_delay(&mut rng, c, p, horizon);
            // P(r > u) = (1 + u/(scale·d))^(1−q) for r the quadratic form.
            let u: f64 = 1.0 - rng.gen::<f64>();
            let r2 = scale * d * (u.powf(1.0 / (1.0 - q)) - 1.0);
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            let (x, y) = (r2.sqrt() * th.cos(), r2.sqrt() * th.sin());
            events.push(Event::new(t, parent.lon + x / kx, parent.lat + y / KM_PER_DEGREE, 0.0, mag(&mut rng)));
            if events.len() > MAX_SIMULATED_EVENTS {
                return Err(invalid(format!("simulation exceeded {MAX_SIMULATED_EVENTS} events")));
            }
        }
    }
    let kept: Vec<Event> = events.into_iter().filter(|e| bg.contains(e.lon, e.lat)).collect();
    let mut cat = Catalog::new(kept);
    cat.t_span = window;
    cat.mc = Some(params.m_ref);
    cat.region = Some(Polygon::rectangle(x0, x1, y0, y1));
    Ok(cat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_background_only() {
        let p = StEtasParams { nu_scale: 1.0, k_prod: 1e-9, c_off: 0.01, alpha_m: 1.0, p_exp: 1.2, d_spread: 2.0, q_exp: 2.0, m_ref: 4.0 };
        let bg = BackgroundField::uniform((0.0, 1.0, 0.0, 1.0), (0.5, 0.5), 0.2).unwrap();
        let gr = GrParams::from_b(1.0, 4.0).unwrap();
        let cat = simulate_st_etas(&p, &bg, (0.0, 1000.0), &gr, 5).unwrap();
        assert!((cat.len() as f64 - 200.0).abs() < 4.0 * 200f64.sqrt());
        assert_eq!(cat, simulate_st_etas(&p, &bg, (0.0, 1000.0), &gr, 5).unwrap());
        let hot = StEtasParams { k_prod: 1e6, ..p };
        assert!(matches!(simulate_st_etas(&hot, &bg, (0.0, 1000.0), &gr, 5), Err(Error::Supercritical { .. })));
    }

    #[test]
    fn delays_follow_truncated_omori() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, p, h) = (0.05, 1.3, 100.0);
        let n = 20_000;
        let below = (0..n).filter(|_| sample_delay(&mut rng, c, p, h) <= 1.0).count() as f64 / n as f64;
        let want = power_law_integral(0.0, 1.0, c, p) / power_law_integral(0.0, h, c, p);
        assert!((below - want).abs() < 0.015);
    }
}
