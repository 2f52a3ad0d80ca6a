use fairrisk_core::conditional::GaussianParams;
use fairrisk_core::distortion::WeightFunction;
use fairrisk_core::pipeline::{
    discrete_terms, generate_portfolio, gini, quantile_bins, simulate_point, summarize, GeneratorTruth, Grid,
    SimulateConfig,
};
use fairrisk_core::perturbation::DiscreteLevels;
use fairrisk_core::sensitivity::{Convention, GaussianLinear, McOptions};
use proptest::prelude::*;

#[test]
fn default_grid_has_61_rows_and_closed_form_columns() {
    let cfg = SimulateConfig { mc: McOptions { draws: 2000, ..McOptions::default() }, ..SimulateConfig::default() };
    let xs = cfg.grid.points().unwrap();
    assert_eq!(xs.len(), 61);
    let gl = cfg.model;
    let ev = WeightFunction::expected_value();
    for &x in xs.iter().step_by(6) {
        let p = simulate_point(&cfg, x).unwrap();
        let gap = p.sensitivity.cascade_ev - p.sensitivity.marginal_ev;
        let want = gl.beta_x * 0.25 * gl.params.cond_mean(x);
        assert!((gap - want).abs() < 1e-6, "x={x}: {gap} vs {want}");
        let gap_es = p.sensitivity.cascade_es - p.sensitivity.marginal_es;
        assert!((gap_es - gl.beta_x * 0.25 * gl.weighted_d(&WeightFunction::expected_shortfall(0.95).unwrap(), x)).abs() < 1e-6);
        assert_eq!(p.sensitivity.marginal_ev, gl.sensitivity(&ev, x));
    }
    let at_zero_mean = simulate_point(&cfg, -3.0).unwrap();
    assert!((at_zero_mean.adjustment.one_minus_c - 1.0).abs() < 1e-15);
}

#[test]
fn simulated_columns_agree_with_closed_forms() {
    let cfg = SimulateConfig::default();
    let mut misses = Vec::new();
    let mut checked = 0;
    for x in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
        let p = simulate_point(&cfg, x).unwrap();
        let (s, a, f, k) = (p.strategy, p.adjustment, p.fair_rule, p.sensitivity);
        let cols = [
            ("p_u", s.p_u, s.p_u_mc, s.p_u_se),
            ("p_df", s.p_df, s.p_df_mc, s.p_df_se),
            ("p_mf_ev", s.p_mf_ev, s.p_mf_ev_mc, s.p_mf_ev_se),
            ("p_mf_es", s.p_mf_es, s.p_mf_es_mc, s.p_mf_es_se),
            ("1-c", a.one_minus_c, a.one_minus_c_mc, a.one_minus_c_se),
            ("1-c_bar", a.one_minus_c_bar, a.one_minus_c_bar_mc, a.one_minus_c_bar_se),
            ("cascade rule", f.cascade, f.cascade_mc, f.cascade_se),
            ("marginal ev", k.marginal_ev, k.marginal_ev_mc, k.marginal_ev_se),
            ("cascade ev", k.cascade_ev, k.cascade_ev_mc, k.cascade_ev_se),
            ("marginal es", k.marginal_es, k.marginal_es_mc, k.marginal_es_se),
            ("cascade es", k.cascade_es, k.cascade_es_mc, k.cascade_es_se),
        ];
        for (name, analytic, mc, se) in cols {
            checked += 1;
            let z = (mc - analytic) / se;
            println!("x={x:>4} {name:<13} analytic {analytic:>10.5} mc {mc:>10.5} se {se:.1e} z {z:+.2}");
            if z.abs() > 2.0 {
                misses.push(format!("{name} at x={x}: z = {z:.2}"));
            }
        }
    }
    assert!(misses.is_empty(), "{} of {checked} outside 2 s.e.: {misses:?}", misses.len());
}

#[test]
fn zero_protected_effect_has_no_correction() {
    let levels = DiscreteLevels::from_masses(vec![0.0, 1.0], &[0.55, 0.45]).unwrap();
    let t = discrete_terms(&[800.0, 800.0], &[0.6, 0.4], &[0.1, 0.1], &levels, 0.9, Convention::Exact).unwrap();
    assert_eq!(t.sensitivity_ev, 0.0);
    assert_eq!(t.denominator, 0.0);
    assert_eq!(t.unaware, t.discrimination_free);
}

#[test]
fn negative_effect_gives_positive_correction() {
    let levels = DiscreteLevels::from_masses(vec![0.0, 1.0], &[0.55, 0.45]).unwrap();
    let g = [1000.0, 1000.0 * (-0.3f64).exp()];
    for probs in [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]] {
        let t = discrete_terms(&g, &probs, &[0.1, 0.1], &levels, 0.9, Convention::Exact).unwrap();
        let correction = t.sensitivity_ev * t.cross / t.denominator;
        assert!(correction > 0.0 && correction < t.unaware, "{probs:?}: {t:?}");
    }
}

#[test]
fn generator_is_byte_deterministic() {
    let truth = GeneratorTruth::default();
    let a = generate_portfolio(&truth, 1000, 99).unwrap();
    let b = generate_portfolio(&truth, 1000, 99).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_ne!(a, generate_portfolio(&truth, 1000, 100).unwrap());
    assert!(a.iter().all(|r| r.exppdays > 0.0 && r.indtppd >= 0.0 && (r.numtppd == 0.0) == (r.indtppd == 0.0)));
}

#[test]
fn calibration_bins_on_generator_truth() {
    let truth = GeneratorTruth::default();
    let recs = generate_portfolio(&truth, 100_000, 8).unwrap();
    let enc = truth.encoder();
    let data = enc.dataset(&recs).unwrap();
    let (b0, beta) = truth.coefficients(&data.layout).unwrap();
    let pred: Vec<f64> = (0..data.len())
        .map(|i| (b0 + data.row(i).iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()).exp())
        .collect();
    let losses: Vec<f64> = recs.iter().map(|r| r.indtppd).collect();
    let exposure: Vec<f64> = recs.iter().map(|r| r.exposure()).collect();
    let q = quantile_bins(&pred, &losses, &exposure, 10).unwrap();
    for b in &q.bins {
        let ratio = b.observed / b.predicted;
        assert!((0.8..=1.2).contains(&ratio), "bin {}: ratio {ratio}", b.bin);
    }
}

#[test]
fn gini_matches_enumeration_on_ten_rows() {
    // Losses concentrated in the last row, predictions ranking them exactly:
    // the Lorenz curve is zero until the last tenth, area = 0.1 * 1 / 2.
    let pred: Vec<f64> = (0..10).map(f64::from).collect();
    let mut losses = vec![0.0; 10];
    losses[9] = 5.0;
    let g = gini(&pred, &losses, &[1.0; 10]).unwrap();
    assert!((g.index - (1.0 - 2.0 * 0.05)).abs() < 1e-12);
    assert_eq!(g.lorenz.len(), 11);
    // Two loss rows in the top two deciles: area = 0.1 * 0.5/2 + 0.1 * 1.5/2 = 0.1.
    losses[8] = 5.0;
    assert!((gini(&pred, &losses, &[1.0; 10]).unwrap().index - 0.8).abs() < 1e-12);
}

#[test]
fn gaussian_params_default_profile() {
    let p = GaussianParams::default();
    assert_eq!((p.mu_x, p.mu_d, p.sigma_x, p.sigma_d, p.tau), (0.0, 3.0, 1.0, 2.0, 0.5));
    let gl = GaussianLinear::default();
    assert_eq!((gl.beta0, gl.beta_x, gl.beta_d, gl.sigma_eps), (1.0, 2.0, 1.0, 0.5));
    assert_eq!(Grid::default().points().unwrap().len(), 61);
}

fn rows() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0.0f64..100.0, n),
            prop::collection::vec(0.1f64..3.0, n),
        )
    })
}

proptest! {
    #[test]
    fn gini_is_bounded_and_antisymmetric((pred, losses, exposure) in rows()) {
        prop_assume!(losses.iter().sum::<f64>() > 0.0);
        let g = gini(&pred, &losses, &exposure).unwrap();
        prop_assert!(g.index >= -1.0 && g.index <= 1.0);
        let rev: Vec<f64> = pred.iter().map(|p| -p).collect();
        let r = gini(&rev, &losses, &exposure).unwrap();
        prop_assert!((g.index + r.index).abs() < 1e-9, "{} {}", g.index, r.index);
        let flat = gini(&vec![1.0; pred.len()], &losses, &exposure).unwrap();
        prop_assert_eq!(flat.index, 0.0);
    }

    #[test]
    fn bins_are_monotone_and_conserve_exposure((pred, losses, exposure) in rows(), n_bins in 2usize..12) {
        let q = quantile_bins(&pred, &losses, &exposure, n_bins).unwrap();
        prop_assert!(q.bins.windows(2).all(|w| w[0].predicted <= w[1].predicted));
        let total: f64 = exposure.iter().sum();
        let binned: f64 = q.bins.iter().map(|b| b.exposure).sum();
        prop_assert!((total - binned).abs() < 1e-9 * total);
        let max_e = exposure.iter().cloned().fold(0.0, f64::max);
        if !q.merged {
            for b in &q.bins {
                prop_assert!((b.exposure - total / n_bins as f64).abs() <= max_e + 1e-9);
            }
        }
    }

    #[test]
    fn calibrated_predictions_match_observed((pred, _, exposure) in rows()) {
        let pos: Vec<f64> = pred.iter().map(|p| p.exp()).collect();
        let losses: Vec<f64> = pos.iter().zip(&exposure).map(|(p, e)| p * e).collect();
        let q = quantile_bins(&pos, &losses, &exposure, 5).unwrap();
        for b in &q.bins {
            prop_assert!((b.predicted - b.observed).abs() <= 1e-9 * b.predicted.abs().max(1.0));
        }
    }

    #[test]
    fn summary_quantiles_are_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = summarize("v", &values).unwrap();
        prop_assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
        prop_assert!(s.min <= s.mean && s.mean <= s.max);
    }
}
