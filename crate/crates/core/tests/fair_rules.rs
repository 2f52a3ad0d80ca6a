use fairrisk_core::conditional::{CompactCopula, DiscreteLaw};
use fairrisk_core::distortion::WeightFunction;
use fairrisk_core::fairness::{fair_rule_on_sample, FairOptions};
use fairrisk_core::oracle::fd_on_sample;
use fairrisk_core::perturbation::{CascadeSpec, CompactLaw, DiscreteLevels};
use fairrisk_core::predictors::FnPredictor;
use fairrisk_core::sensitivity::{conditional_sample, Attribute, GaussianLinear, McOptions, Noise, Scenario};

fn check(scn: &Scenario<'_>, attr: &Attribute, cascade: Option<&CascadeSpec>, xs: &[f64], delta: f64) {
    let mc = McOptions { draws: 20_000, ..McOptions::default() };
    for rho in [WeightFunction::expected_value(), WeightFunction::expected_shortfall(0.95).unwrap()] {
        for &x in xs {
            let s = conditional_sample(scn, &[x], &mc).unwrap();
            let r = fair_rule_on_sample(scn.model, &s, &rho, attr, cascade, &FairOptions::default()).unwrap();
            let raw = fd_on_sample(scn, &s, &rho, attr, cascade, delta, 11, None).unwrap();
            let adj = fd_on_sample(scn, &s, &rho, attr, cascade, delta, 11, Some(&r.frozen_adjustment())).unwrap();
            println!("{} x={x}: raw {:.4}±{:.4} plug-in {:.4} adjusted {:.2e}±{:.2e}", rho.label, raw.value, raw.se, r.adjustment.sensitivity, adj.value, adj.se);
            assert!(adj.value.abs() <= (2.0 * adj.se).max(1e-3), "{} x={x}: {adj:?}", rho.label);
        }
    }
}

#[test]
fn continuous_rule_is_fair() {
    let gl = GaussianLinear::default();
    let model = gl.model().unwrap();
    let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
    check(&scn, &Attribute::continuous(0), None, &[-1.0, 1.5], 1e-3);
}

#[test]
fn cascade_rule_is_fair() {
    let gl = GaussianLinear::default();
    let model = gl.model().unwrap();
    let spec = gl.cascade_spec().unwrap();
    let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
    check(&scn, &Attribute::continuous(0), Some(&spec), &[-1.0, 1.5], 1e-3);
}

#[test]
fn compact_rule_is_fair() {
    let law = CompactLaw::Beta { alpha: 2.0, beta: 3.0, lower: 0.0, upper: 1.0 };
    let cop = CompactCopula { law: law.clone(), x_mean: 0.0, x_sd: 1.0, tau: 0.4 };
    let g = FnPredictor::new(1, 1, |d, x| 1.0 + 2.0 * x[0] + 3.0 * d[0] + d[0] * d[0]);
    let scn = Scenario { model: &g, law: &cop, noise: Noise::Gaussian { sd: 0.3 } };
    check(&scn, &Attribute::compact(0, law), None, &[-1.0, 0.5], 1e-3);
}

#[test]
fn discrete_rule_is_fair() {
    let levels = DiscreteLevels::from_masses(vec![0.0, 1.0, 2.0], &[0.3, 0.3, 0.4]).unwrap();
    let law = DiscreteLaw::independent(levels.clone());
    let g = FnPredictor::new(1, 1, |d, x| 1.0 + 2.0 * x[0] + d[0] + 0.5 * d[0] * d[0]);
    let scn = Scenario { model: &g, law: &law, noise: Noise::Gaussian { sd: 0.5 } };
    check(&scn, &Attribute::discrete(0, levels), None, &[-1.0, 0.5], 0.05);
}
