//! Parameter recovery from simulated data.

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seismostat::aftershock::{fit_omori, omori_expected_count, simulate_omori, OmoriParams};
use seismostat::magnitude::{fit_gr, simulate_gr};
use seismostat::renewal::{fit_hier_bayes, simulate_bpt, AlphaPrior, BptParams, SegmentData};

#[test]
fn gr_b_value_from_a_large_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mags = simulate_gr(1.1, 2.0, 0.0, 40_000, &mut rng);
    let gr = fit_gr(&mags, 2.0, 0.0).unwrap();
    assert_relative_eq!(gr.b, 1.1, max_relative = 0.03);
    assert_relative_eq!(gr.beta, gr.b * std::f64::consts::LN_10, max_relative = 1e-15);
}

#[test]
fn omori_parameters_within_three_standard_errors() {
    let truth = OmoriParams::new(80.0, 0.05, 1.1).unwrap();
    let window = (0.0, 300.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times = simulate_omori(&truth, window, &mut rng).unwrap();
    let fit = fit_omori(&times, window).unwrap();
    assert!(fit.converged);
    let got = [fit.params.k_prod, fit.params.c_off, fit.params.p_exp];
    let want = [truth.k_prod, truth.c_off, truth.p_exp];
    for i in 0..3 {
        assert!((got[i] - want[i]).abs() < 3.0 * fit.se[i], "{}: {} vs {} (se {})", fit.param_names[i], got[i], want[i], fit.se[i]);
    }
    let n = omori_expected_count(&fit.params, window.0, window.1);
    assert_relative_eq!(n, times.len() as f64, max_relative = 0.01);
}

#[test]
fn shared_aperiodicity_is_recovered_across_segments() {
    let alpha = 0.3;
    let segments: Vec<SegmentData> = (0..12)
        .map(|j| {
            let mu = 100.0 * (1.0 + 0.2 * j as f64);
            let iv = simulate_bpt(&BptParams::new(mu, alpha).unwrap(), 6, 100 + j).unwrap();
            SegmentData { geodetic_mean: Some(mu), ..SegmentData::new(format!("s{j}"), iv) }
        })
        .collect();
    let fit = fit_hier_bayes(&segments, AlphaPrior::Shared).unwrap();
    assert!(fit.converged);
    let shared = fit.hyper.phi_alpha.0.exp();
    assert!((shared - alpha).abs() < 0.1, "shared alpha {shared}");
    assert_eq!(fit.posteriors.len(), segments.len());
}
