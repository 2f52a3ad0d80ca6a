//! Brute-force validators.
//!
//! Finite-difference sensitivities re-simulate the perturbed responses on
//! common random numbers and difference the empirical risk measure; closed
//! forms cover the two-branch quantile, the Bernoulli sensitivity and the
//! lognormal mixture of the cascade example; a long-run accelerated gradient
//! method certifies GLM fits.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distortion::{evaluate, EmpiricalDistribution, WeightFunction};
use crate::error::{Error, Result};
use crate::perturbation::{
    cascade_sample, perturb_compact_value, perturb_continuous, perturb_discrete_mass, CascadeSpec, ConditionalQuantile,
    DiscreteLevels, ProtectedSpec,
};
use crate::predictors::{objective, EncodedDataset, ModelFamily};
use crate::sampling::{complement, jackknife_se, latin_hypercube, open_uniform, stream_rng, DEFAULT_BATCHES};
use crate::sensitivity::{Attribute, ConditionalSample, Estimate, Scenario, TwoBranch};
use crate::special::{compensated_sum, ln, normal_cdf, normal_pdf, normal_quantile, sqrt};

/// Stream reserved for the auxiliary uniforms of discrete perturbations.
const AUX_STREAM: u64 = 0x00ff_fe00;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.1) {
        return Err(Error::invalid("finite-difference step must lie in (0, 0.1]"));
    }
    Ok(())
}

/// Auxiliary uniforms `V_j` of the distributional transform, one per draw.
///
/// Within each class the draws are ranked by their response and the `r`-th
/// receives `frac(U + r φ)` with `φ = (√5 − 1)/2` and a random shift `U`
/// per class, so every `V_j` is uniform while the draws crossing a level
/// boundary spread evenly over the response ranks.
#[must_use]
pub fn auxiliary_uniforms(seed: u64, classes: &[usize], y: &[f64]) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_8;
    let mut rng = stream_rng(seed, AUX_STREAM);
    let groups = classes.iter().copied().max().map_or(0, |k| k + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (j, &k) in classes.iter().enumerate() {
        members[k].push(j);
    }
    let mut out = vec![0.0; classes.len()];
    for group in &mut members {
        group.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        let shift = open_uniform(&mut rng);
        for (r, &j) in group.iter().enumerate() {
            let t = shift + r as f64 * PHI;
            let v = t - libm::floor(t);
            out[j] = if v > 0.0 { v } else { 0.5 };
        }
    }
    out
}

/// Class index of every draw for a discrete attribute, zero otherwise.
pub fn draw_classes(sample: &ConditionalSample, attr: &Attribute) -> Result<Vec<usize>> {
    match &attr.spec {
        ProtectedSpec::Discrete { levels } => (0..sample.len())
            .map(|j| {
                let d = sample.row(j)[attr.index];
                levels.index_of(d).ok_or_else(|| Error::InvalidInput(alloc::format!("sampled value {d} is not a level")))
            })
            .collect(),
        _ => Ok(vec![0; sample.len()]),
    }
}

/// Responses of every draw after perturbing `attr` by `delta`.
///
/// `aux` holds the distributional-transform uniforms used by discrete
/// schemes; the noise of each draw is kept.
pub fn perturbed_responses(
    scenario: &Scenario<'_>,
    sample: &ConditionalSample,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    delta: f64,
    aux: &[f64],
) -> Result<Vec<f64>> {
    let m = sample.m;
    let i = attr.index;
    if i >= m || aux.len() < sample.len() {
        return Err(Error::invalid("perturbation does not match the sample"));
    }
    let mut out = Vec::with_capacity(sample.len());
    for j in 0..sample.len() {
        let f = sample.features(j);
        let d = f[i];
        let t = match &attr.spec {
            ProtectedSpec::ContinuousUnbounded => perturb_continuous(d, delta),
            ProtectedSpec::ContinuousCompact { law } => perturb_compact_value(d, delta, law),
            ProtectedSpec::Discrete { levels } => {
                let k = levels
                    .index_of(d)
                    .ok_or_else(|| Error::InvalidInput(alloc::format!("sampled value {d} is not a level")))?;
                levels.levels()[levels.perturbed_level(levels.distributional_transform(k, aux[j]), delta)]
            }
        };
        let moved = match cascade {
            None => {
                let mut g = f.clone();
                g[i] = t;
                g
            }
            Some(spec) => {
                let v = spec.rosenblatt(&f)?;
                cascade_sample(spec, &f, t, &v)?
            }
        };
        out.push(scenario.model.eval(&moved[..m], &moved[m..]) + sample.eps[j]);
    }
    Ok(out)
}

fn empirical_risk(rho: &WeightFunction, y: &[f64], idx: &[usize]) -> Result<f64> {
    let v: Vec<f64> = idx.iter().map(|&j| y[j]).collect();
    evaluate(rho, &EmpiricalDistribution::new(&v)?)
}

/// Central difference `(R(+δ) − R(−δ)) / 2δ` with a block jackknife error,
/// where `R(δ) = ρ̂_γ(Y_δ) − mean(Y_δ A)` and `A` is an optional frozen
/// per-draw adjustment.
pub fn central_difference(
    rho: &WeightFunction,
    y_plus: &[f64],
    y_minus: &[f64],
    delta: f64,
    adjustment: Option<&[f64]>,
    batches: &[core::ops::Range<usize>],
) -> Result<Estimate> {
    let stat = |idx: &[usize]| -> Result<f64> {
        let mut diff = empirical_risk(rho, y_plus, idx)? - empirical_risk(rho, y_minus, idx)?;
        if let Some(a) = adjustment {
            diff -= compensated_sum(idx.iter().map(|&j| (y_plus[j] - y_minus[j]) * a[j])) / idx.len() as f64;
        }
        Ok(diff / (2.0 * delta))
    };
    let all: Vec<usize> = (0..y_plus.len()).collect();
    let value = stat(&all)?;
    let mut leave = Vec::with_capacity(batches.len());
    for b in 0..batches.len() {
        leave.push(stat(&complement(batches, b))?);
    }
    Ok(Estimate { value, se: jackknife_se(batches.len(), |b| leave[b]) })
}

/// Finite-difference sensitivity of the (optionally adjusted) decision on
/// an existing conditional sample.
#[allow(clippy::too_many_arguments)]
pub fn fd_on_sample(
    scenario: &Scenario<'_>,
    sample: &ConditionalSample,
    rho: &WeightFunction,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    delta: f64,
    seed: u64,
    adjustment: Option<&[f64]>,
) -> Result<Estimate> {
    check_delta(delta)?;
    let aux = auxiliary_uniforms(seed, &draw_classes(sample, attr)?, &sample.y);
    let plus = perturbed_responses(scenario, sample, attr, cascade, delta, &aux)?;
    let minus = perturbed_responses(scenario, sample, attr, cascade, -delta, &aux)?;
    central_difference(rho, &plus, &minus, delta, adjustment, &sample.batches)
}

/// Finite-difference sensitivity of `ρ_γ(Y | X = x)` to `attr`.
#[allow(clippy::too_many_arguments)]
pub fn fd_sensitivity(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    x: &[f64],
    cascade: Option<&CascadeSpec>,
    delta: f64,
    mc: &crate::sensitivity::McOptions,
) -> Result<Estimate> {
    let sample = crate::sensitivity::conditional_sample(scenario, x, mc)?;
    fd_on_sample(scenario, &sample, rho, attr, cascade, delta, mc.seed, None)
}

/// Finite-difference sensitivity of the unconditional `ρ_γ(Y)` in the
/// two-branch model under `D(1 + δ)`.
pub fn fd_two_branch(model: &TwoBranch, rho: &WeightFunction, delta: f64, draws: usize, seed: u64) -> Result<Estimate> {
    check_delta(delta)?;
    let design = latin_hypercube(seed, draws, 2, DEFAULT_BATCHES);
    let mut plus = Vec::with_capacity(draws);
    let mut minus = Vec::with_capacity(draws);
    for j in 0..draws {
        let p = design.point(j);
        let (x1, d, y) = model.draw(p[0], p[1]);
        if x1 {
            plus.push(y);
            minus.push(y);
        } else {
            plus.push(d * (1.0 + delta));
            minus.push(d * (1.0 - delta));
        }
    }
    central_difference(rho, &plus, &minus, delta, None, &design.batches)
}

/// Closed-form quantile of the two-branch response.
#[must_use]
pub fn example32_quantile(model: &TwoBranch, u: f64) -> f64 {
    model.quantile(u)
}

/// `β Φ⁻¹(1 − p) φ(Φ⁻¹(1 − p)) (1 − p)`: the level-mass form of the
/// Bernoulli expected-value sensitivity.
#[must_use]
pub fn bernoulli_published(beta: f64, p: f64) -> f64 {
    let z = normal_quantile(1.0 - p);
    beta * z * normal_pdf(z) * (1.0 - p)
}

/// `β Φ⁻¹(1 − p) φ(Φ⁻¹(1 − p))`: the derivative of `β p_δ` at `δ = 0`.
#[must_use]
pub fn bernoulli_exact(beta: f64, p: f64) -> f64 {
    let z = normal_quantile(1.0 - p);
    beta * z * normal_pdf(z)
}

/// `Φ((ln x − μ)/σ)(1 − p_δ) + Φ((ln x − 2μ)/σ) p_δ`.
#[must_use]
pub fn lognormal_mixture_cdf(x: f64, mu: f64, sigma: f64, p: f64, delta: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let pd = perturb_discrete_mass(p, delta);
    normal_cdf((ln(x) - mu) / sigma) * (1.0 - pd) + normal_cdf((ln(x) - 2.0 * mu) / sigma) * pd
}

/// Cascade-perturbed covariate draws for `D ~ Bernoulli(p)` and
/// `X | D = k ~ LogNormal((k + 1)μ, σ²)`.
pub fn cascade_mixture_draws(p: f64, mu: f64, sigma: f64, delta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let levels = DiscreteLevels::bernoulli(p)?;
    let spec = CascadeSpec::new(
        0,
        vec![
            None,
            Some(ConditionalQuantile::LogNormalByLevel { levels: vec![0.0, 1.0], mu: vec![mu, 2.0 * mu], sigma: vec![sigma, sigma] }),
        ],
        vec![],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = open_uniform(&mut rng);
        let k = usize::from(u > 1.0 - p);
        let v = open_uniform(&mut rng);
        let x = spec.quantiles[1].as_ref().expect("set above").quantile(v, k as f64)?;
        let ut = levels.distributional_transform(k, open_uniform(&mut rng));
        let t = levels.levels()[levels.perturbed_level(ut, delta)];
        let f = [k as f64, x];
        let rv = spec.rosenblatt(&f)?;
        out.push(cascade_sample(&spec, &f, t, &rv)?[1]);
    }
    Ok(out)
}

/// `sup_x |F̂_n(x) − F(x)|`.
#[must_use]
pub fn kolmogorov_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut best = 0.0_f64;
    for (k, &x) in s.iter().enumerate() {
        let f = cdf(x);
        best = best.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    best
}

/// Iteration budget of [`deviance_oracle`].
pub const ORACLE_ITERATIONS: usize = 5000;

/// The oracle stops after this many iterations without a relative
/// improvement above [`STALL_TOLERANCE`].
pub const STALL_ITERATIONS: usize = 200;
pub const STALL_TOLERANCE: f64 = 1e-14;

/// Mean deviance reached by Nesterov-accelerated gradient descent with
/// backtracking on standardized columns, run for [`ORACLE_ITERATIONS`]
/// iterations, or until the gradient vanishes or the deviance stalls.
pub fn deviance_oracle(data: &EncodedDataset, family: ModelFamily) -> Result<f64> {
    deviance_oracle_with(data, family, ORACLE_ITERATIONS)
}

pub fn deviance_oracle_with(data: &EncodedDataset, family: ModelFamily, iterations: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit on an empty dataset"));
    }
    let p = data.dim();
    let n = data.len();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    for i in 0..n {
        for ((s, v), m) in sd.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|s| if s > 0.0 { sqrt(s) } else { 1.0 }).collect();
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..n {
        rows.extend(data.row(i).iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s));
    }
    let z = EncodedDataset::new(rows, data.layout.clone(), data.response.clone(), data.exposure.clone())?;
    let wsum: f64 = (0..n).map(|i| data.weight(i)).sum();
    let ybar = (0..n).map(|i| data.weight(i) * data.response[i]).sum::<f64>() / wsum;
    let mut beta = vec![0.0; p + 1];
    beta[0] = family.link().apply(ybar.max(1e-10));
    let f = |b: &[f64]| objective(&z, family, b, false).deviance;
    let mut prev = beta.clone();
    let mut step = 1.0;
    let mut best = f(&beta);
    let mut stalled = 0;
    for k in 1..=iterations {
        let mom = (k as f64 - 1.0) / (k as f64 + 2.0);
        let look: Vec<f64> = beta.iter().zip(&prev).map(|(b, q)| b + mom * (b - q)).collect();
        let obj = objective(&z, family, &look, true);
        let gnorm2: f64 = obj.gradient.iter().map(|g| g * g).sum();
        if gnorm2 < 1e-30 {
            break;
        }
        let mut t = step * 2.0;
        let (cand, fb) = loop {
            let cand = look.iter().zip(&obj.gradient).map(|(b, g)| b - t * g).collect::<Vec<f64>>();
            let fc = f(&cand);
            if fc <= obj.deviance - t * gnorm2 || t < 1e-14 {
                break (cand, fc);
            }
            t *= 0.5;
        };
        step = t;
        prev = core::mem::replace(&mut beta, cand);
        if fb > best {
            beta = prev.clone();
        } else {
            if best - fb > STALL_TOLERANCE * best.abs() {
                stalled = 0;
            }
            best = fb;
        }
        stalled += 1;
        if stalled > STALL_ITERATIONS {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::{DiscreteLaw, GaussianParams};
    use crate::predictors::{fit_glm, FeatureLayout, FitOptions, FnPredictor, Link, Loss};
    use crate::sensitivity::{GaussianLinear, McOptions, Noise};

    fn ev() -> WeightFunction {
        WeightFunction::expected_value()
    }

    #[test]
    fn linear_model_fd_matches_mean_sensitivity() {
        let gl = GaussianLinear::default();
        let model = gl.model().unwrap();
        let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
        let mc = McOptions { draws: 20_000, ..McOptions::default() };
        for delta in [1e-2, 1e-3, 1e-4] {
            let e = fd_sensitivity(&scn, &ev(), &Attribute::continuous(0), &[1.0], None, delta, &mc).unwrap();
            assert!((e.value - 4.0).abs() < 3.0 * e.se + 1e-3, "{delta}: {e:?}");
        }
        assert!(fd_sensitivity(&scn, &ev(), &Attribute::continuous(0), &[1.0], None, 0.2, &mc).is_err());
    }

    #[test]
    fn constant_model_has_zero_fd() {
        let g = FnPredictor::new(1, 1, |_, _| 3.0);
        let p = GaussianParams::default();
        let scn = Scenario { model: &g, law: &p, noise: Noise::Gaussian { sd: 1.0 } };
        let mc = McOptions { draws: 5000, ..McOptions::default() };
        let es = WeightFunction::expected_shortfall(0.9).unwrap();
        assert_eq!(fd_sensitivity(&scn, &es, &Attribute::continuous(0), &[0.0], None, 1e-3, &mc).unwrap().value, 0.0);
    }

    #[test]
    fn zero_delta_branches_coincide() {
        let levels = DiscreteLevels::from_masses(vec![0.0, 1.0, 2.0], &[0.3, 0.3, 0.4]).unwrap();
        let law = DiscreteLaw::independent(levels.clone());
        let g = FnPredictor::new(1, 1, |d, x| d[0] + x[0]);
        let scn = Scenario { model: &g, law: &law, noise: Noise::Gaussian { sd: 0.2 } };
        let mc = McOptions { draws: 2000, ..McOptions::default() };
        let s = crate::sensitivity::conditional_sample(&scn, &[0.0], &mc).unwrap();
        let attr = Attribute::discrete(0, levels);
        let aux = auxiliary_uniforms(0, &draw_classes(&s, &attr).unwrap(), &s.y);
        let a = perturbed_responses(&scn, &s, &attr, None, 0.0, &aux).unwrap();
        assert_eq!(a, s.y);
    }

    #[test]
    fn two_branch_examples() {
        let m = TwoBranch { p: 0.5, c: 1.0, x2: 2.0 };
        assert_eq!(example32_quantile(&m, 0.25), 0.5);
        assert_eq!(example32_quantile(&m, 0.5), 1.0);
        assert_eq!(example32_quantile(&TwoBranch { c: 0.5, ..m }, 0.75), 2.0);
        let m = TwoBranch { p: 0.5, c: 0.5, x2: 2.0 };
        let es = WeightFunction::expected_shortfall(0.9).unwrap();
        let e = fd_two_branch(&m, &es, 1e-3, 20_000, 3).unwrap();
        assert!(e.value.abs() <= 2.0 * e.se);
    }

    #[test]
    fn mixture_cdf_matches_cascade_draws() {
        for (p, delta) in [(0.2, 0.0), (0.8, 0.2)] {
            let draws = cascade_mixture_draws(p, 0.5, 0.4, delta, 20_000, 7).unwrap();
            let k = kolmogorov_distance(&draws, |x| lognormal_mixture_cdf(x, 0.5, 0.4, p, delta));
            assert!(k < 0.02, "p={p} δ={delta}: {k}");
        }
    }

    #[test]
    fn deviance_oracle_examples() {
        let layout = FeatureLayout::continuous(&[], &["a"]);
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let data = EncodedDataset::new(x.clone(), layout.clone(), y, None).unwrap();
        assert!(deviance_oracle(&data, ModelFamily::Linear).unwrap() < 1e-8);
        let counts: Vec<f64> = (0..50).map(|i| (i % 4) as f64).collect();
        let data = EncodedDataset::new(vec![0.0; 50], layout, counts.clone(), None).unwrap();
        let fam = ModelFamily::Glm { link: Link::Log, loss: Loss::Poisson };
        let ybar = counts.iter().sum::<f64>() / 50.0;
        let closed = counts.iter().map(|&c| Loss::Poisson.unit_deviance(c, ybar)).sum::<f64>() / 50.0;
        assert!((deviance_oracle(&data, fam).unwrap() - closed).abs() < 1e-10);
        let data = EncodedDataset::new(x, FeatureLayout::continuous(&[], &["a"]), counts, None).unwrap();
        let fit = fit_glm(&data, fam, &FitOptions::default()).unwrap();
        let oracle = deviance_oracle(&data, fam).unwrap();
        assert!(oracle <= closed);
        assert!((fit.diagnostics.unwrap().deviance - oracle).abs() < 1e-8 * (1.0 + oracle));
    }
}
