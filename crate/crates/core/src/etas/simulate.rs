//! Exact ETAS simulation by thinning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::{kernel, EtasParams};
use crate::catalog::{Catalog, Event};
use crate::error::{invalid, Error, Result};
use crate::magnitude::GrParams;
use crate::numerics::power_law_integral;

/// Hard cap on the number of generated events.
pub const MAX_SIMULATED_EVENTS: usize = 500_000;

/// Expected direct offspring per event under the G–R magnitude law,
/// K·β/(β − α) · ∫₀^∞ (s + c)^(−p) ds. Infinite when p ≤ 1 or β ≤ α.
pub fn branching_ratio(params: &EtasParams, beta: f64) -> f64 {
    if beta <= params.alpha_m || params.p_exp <= 1.0 {
        return f64::INFINITY;
    }
    params.k_prod * beta / (beta - params.alpha_m)
        / ((params.p_exp - 1.0) * params.c_off.powf(params.p_exp - 1.0))
}

/// Expected direct offspring per event within a horizon of `length` days
/// after its occurrence.
pub fn branching_ratio_horizon(params: &EtasParams, beta: f64, length: f64) -> f64 {
    if beta <= params.alpha_m {
        return f64::INFINITY;
    }
    params.k_prod * beta / (beta - params.alpha_m) * power_law_integral(0.0, length, params.c_off, params.p_exp)
}

/// Simulates the ETAS process on `horizon = (t0, t1)` with magnitudes
/// M₀ + Exp(β). Events of `history` before t0 trigger offspring and are
/// included in the returned catalog.
///
/// Refuses parameter sets whose expected offspring per event within the
/// horizon length reaches 1.
pub fn simulate_etas(
    params: &EtasParams,
    horizon: (f64, f64),
    history: Option<&Catalog>,
    gr: &GrParams,
    seed: u64,
) -> Result<Catalog> {
    params.validate()?;
    let (t0, t1) = horizon;
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(invalid(format!("horizon ({t0}, {t1}) must satisfy t0 < t1")));
    }
    if !(gr.beta > 0.0) {
        return Err(invalid("G-R beta must be positive"));
    }
    let ratio = branching_ratio_horizon(params, gr.beta, t1 - t0);
    if !(ratio < 1.0) {
        return Err(Error::Supercritical { ratio });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut events: Vec<Event> = history
        .map(|h| h.events.iter().filter(|e| e.t < t0).copied().collect())
        .unwrap_or_default();
    let mut times: Vec<f64> = events.iter().map(|e| e.t).collect();
    let mut weights: Vec<f64> = events
        .iter()
        .map(|e| (params.alpha_m * (e.mag - params.m_ref)).exp())
        .collect();
    let (mu, k, c, p) = (params.mu_bg, params.k_prod, params.c_off, params.p_exp);
    let intensity = |t: f64, times: &[f64], w: &[f64]| mu + k * kernel::kernel_value(t, times, w, c, p);

    let mut t = t0;
    let mut bound = intensity(t, &times, &weights);
    loop {
        let e: f64 = Exp1.sample(&mut rng);
        let cand = t + e / bound;
        if cand > t1 {
            break;
        }
        let lam = intensity(cand, &times, &weights);
        let u: f64 = rng.gen();
        t = cand;
        if u * bound <= lam {
            let x: f64 = Exp1.sample(&mut rng);
            let mag = params.m_ref + x / gr.beta;
            let w = (params.alpha_m * (mag - params.m_ref)).exp();
            events.push(Event::at(t, mag));
            times.push(t);
            weights.push(w);
            if events.len() > MAX_SIMULATED_EVENTS {
                return Err(invalid(format!(
                    "simulation exceeded {MAX_SIMULATED_EVENTS} events"
                )));
            }
            bound = lam + k * w * c.powf(-p);
        } else {
            bound = lam;
        }
    }
    let t_start = history.map_or(t0, |h| h.t_span.0.min(t0));
    Ok(Catalog::with_span(events, (t_start.min(0.0), t1)))
}
