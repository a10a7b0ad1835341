//! Property tests for the structural invariants of the model types.

use proptest::prelude::*;
use seismostat::catalog::{single_link_cluster, Catalog, Event};
use seismostat::etas::{etas_compensator, transform_times, EtasParams};
use seismostat::etas_st::{background_weights, BackgroundField, ClusterShape, StEtasParams};
use seismostat::foreshock::{inv_logit, logit, probability_path, ForeshockModel, LocationPrior};
use seismostat::magnitude::GrParams;
use seismostat::numerics::optimize::{minimize, Bound};
use seismostat::precursor::{combine_approx, combine_exact, PrecursorSet};
use seismostat::renewal::{bpt_cdf, bpt_functions, BptParams};

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0.0..100.0f64, 139.5..140.5f64, 35.0..36.0f64, 0.0..30.0f64, 3.0..6.5f64), 1..60)
        .prop_map(|v| v.into_iter().map(|(t, x, y, d, m)| Event::new(t, x, y, d, m)).collect())
}

fn etas_params() -> impl Strategy<Value = EtasParams> {
    (0.01..1.0f64, 0.001..0.1f64, 0.001..0.1f64, 0.0..2.0f64, 0.8..1.6f64).prop_map(|(mu, k, c, a, p)| EtasParams {
        mu_bg: mu,
        k_prod: k,
        c_off: c,
        alpha_m: a,
        p_exp: p,
        m_ref: 3.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn catalogs_are_time_sorted(ev in events()) {
        let cat = Catalog::new(ev);
        prop_assert!(cat.events.windows(2).all(|w| w[0].t <= w[1].t));
        let filtered = cat.with_completeness(4.0);
        prop_assert!(filtered.events.iter().all(|e| e.mag >= 4.0));
    }

    #[test]
    fn cluster_records_are_consistent(ev in events(), km in 1.0..80.0f64, days in 0.1..10.0f64) {
        let cat = Catalog::new(ev);
        let clusters = single_link_cluster(&cat, km, days).unwrap();
        let total: usize = clusters.iter().map(|c| c.len()).sum();
        prop_assert_eq!(total, cat.len());
        for c in &clusters {
            let main = cat.events[c.mainshock_id];
            for &i in &c.member_ids {
                let e = cat.events[i];
                prop_assert!(e.mag < main.mag || (e.mag == main.mag && i >= c.mainshock_id));
            }
            let pre = c.member_ids.iter().filter(|&&i| i < c.mainshock_id).map(|&i| cat.events[i].mag).reduce(f64::max);
            match (pre, c.mag_gap) {
                (Some(m), Some(g)) => prop_assert!((g - (main.mag - m)).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "gap mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn gr_beta_is_b_ln10(b in 0.3..2.5f64) {
        let gr = GrParams::from_b(b, 2.0).unwrap();
        prop_assert_eq!(gr.beta, b * std::f64::consts::LN_10);
    }

    #[test]
    fn residual_times_are_monotone_and_bounded(ev in events(), p in etas_params()) {
        let cat = Catalog::new(ev);
        let window = (0.0, 100.0);
        let r = transform_times(&cat, &p, window).unwrap();
        let total = etas_compensator(&cat, &p, window);
        prop_assert!(r.tau.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        prop_assert!(r.tau.iter().all(|&x| x >= 0.0 && x <= total * (1.0 + 1e-10)));
    }

    #[test]
    fn cluster_shape_is_positive_definite(
        s1 in 0.2..5.0f64, s2 in 0.2..5.0f64, rho in -0.95..0.95f64, x in -10.0..10.0f64, y in -10.0..10.0f64,
    ) {
        let sh = ClusterShape { centroid: (140.0, 35.0), sigma1: s1, sigma2: s2, rho };
        prop_assume!(x.abs() + y.abs() > 1e-6);
        prop_assert!(sh.quadratic_form(x, y) > 0.0);
        let id = ClusterShape::identity_at(140.0, 35.0);
        prop_assert!((id.quadratic_form(x, y) - (x * x + y * y)).abs() < 1e-9 * (x * x + y * y));
    }

    #[test]
    fn declustering_weights_are_probabilities(ev in events(), nu in 0.1..2.0f64, k in 1.0..100.0f64) {
        let cat = Catalog::new(ev);
        let params = StEtasParams {
            nu_scale: nu, k_prod: k, c_off: 0.01, alpha_m: 1.0, p_exp: 1.2, d_spread: 2.0, q_exp: 2.0, m_ref: 3.0,
        };
        let bg = BackgroundField::uniform((139.0, 141.0, 34.5, 36.5), (0.25, 0.25), 0.05).unwrap();
        let dec = background_weights(&cat, &[], &params, &bg, 3).unwrap();
        prop_assert!(dec.phi.iter().all(|&f| (0.0..=1.0).contains(&f)));
        prop_assert!(dec.background.len() <= cat.len());
    }

    #[test]
    fn bpt_functions_are_coherent(mu in 0.5..500.0f64, alpha in 0.05..2.0f64, x1 in 0.01..3.0f64, x2 in 0.01..3.0f64) {
        let p = BptParams::new(mu, alpha).unwrap();
        let (a, b) = if x1 < x2 { (x1 * mu, x2 * mu) } else { (x2 * mu, x1 * mu) };
        prop_assert!(bpt_cdf(a, &p) <= bpt_cdf(b, &p));
        let v = bpt_functions(b, &p).unwrap();
        prop_assert!((v.cdf + v.survivor - 1.0).abs() < 1e-12);
        prop_assert!(v.pdf >= 0.0 && v.hazard >= 0.0);
        if v.survivor > 1e-200 {
            prop_assert!((v.hazard * v.survivor - v.pdf).abs() <= 1e-9 * v.pdf.max(1e-300));
        }
    }

    #[test]
    fn precursor_combination_stays_in_unit_interval(p0 in 1e-4..0.5f64, pk in prop::collection::vec(1e-4..0.99f64, 1..6)) {
        let set = PrecursorSet::new(p0, pk.clone()).unwrap();
        let exact = combine_exact(&set).unwrap();
        prop_assert!(exact > 0.0 && exact < 1.0);
        let approx = combine_approx(&set).unwrap();
        prop_assert!(approx.probability > 0.0);
        prop_assert_eq!(approx.gains.len(), pk.len());
        let more = pk.iter().map(|&p| (p * 1.01).min(0.995)).collect();
        let higher = combine_exact(&PrecursorSet::new(p0, more).unwrap()).unwrap();
        prop_assert!(higher >= exact * (1.0 - 1e-12));
    }

    #[test]
    fn foreshock_probabilities_are_probabilities(
        ev in events(), prior in 0.001..0.999f64, mu0 in -3.0..3.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, d in -2.0..2.0f64,
    ) {
        let members = Catalog::new(ev).events;
        let model = ForeshockModel {
            location_prior: LocationPrior::constant((139.0, 141.0, 34.0, 37.0), prior).unwrap(),
            mu0,
            b_coef: [b, 0.0, 0.0],
            c_coef: [c, 0.1, 0.0],
            d_coef: [d, 0.0, -0.1],
        };
        let path = probability_path(&members, &model).unwrap();
        prop_assert_eq!(path.len(), members.len());
        prop_assert!((path[0] - prior).abs() < 1e-12);
        prop_assert!(path.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn logit_round_trips(p in 1e-9..(1.0 - 1e-9f64)) {
        prop_assert!((inv_logit(logit(p)) - p).abs() < 1e-12);
    }

    #[test]
    fn optimizer_improves_and_returns_symmetric_hessian(
        a in 0.5..4.0f64, b in -3.0..3.0f64, x0 in 0.2..5.0f64, y0 in -4.0..4.0f64,
    ) {
        let f = |x: &[f64]| (x[0].ln() - a.ln()).powi(2) + 2.0 * (x[1] - b).powi(2) + 0.5 * (x[0].ln() - a.ln()) * (x[1] - b);
        let start = f(&[x0, y0]);
        let r = minimize(f, &[x0, y0], &[Bound::Positive, Bound::Free], 1e-10).unwrap();
        prop_assert!(r.f_opt <= start + 1e-12);
        prop_assert!((r.x_opt[0] - a).abs() < 1e-4 * a && (r.x_opt[1] - b).abs() < 1e-4);
        let h = &r.hessian_approx;
        prop_assert!((h[(0, 1)] - h[(1, 0)]).abs() <= 1e-9 * h[(0, 1)].abs().max(1.0));
    }
}
