//! Differential sensitivities of `ρ_γ(Y | X = x)` to protected attributes.
//!
//! At a query point `x` the conditional law of `D` is sampled on a
//! replicated Latin hypercube, `Y = g(D, x) + ε` is formed, and the
//! sensitivity is the sample average of a per-draw *direction* `W` times the
//! rank weight `γ̄` of the draw. The direction depends on the perturbation:
//!
//! | scheme                | direction `W`                                              |
//! |-----------------------|------------------------------------------------------------|
//! | continuous `D(1+δ)`   | `D_i ∂_i g`                                                |
//! | compact (exact)       | `z φ(z) / f(D_i) · ∂_i g`, `z = Φ⁻¹(F(D_i))`                |
//! | compact (published)   | `φ(z) / f(D_i) · ∂_i g`                                    |
//! | discrete (published)  | `Σ_k v_k Δ_k g 1{D_i = t_k}`                               |
//! | cascade               | `∂_i g` replaced by `∂_i g + Σ_l ∂_l g · ∂_t F⁻¹_{l|D_i}`   |
//!
//! The exact discrete sensitivity moves whole draws between adjacent levels
//! and is evaluated with the path integral `Γ` of the empirical weights:
//! a draw at level `t_j` contributes
//! `(v_{j−1}/2)/Δp_j · [Γ(Y↓) − Γ(Y)] − (v_j/2)/Δp_j · [Γ(Y↑) − Γ(Y)]`,
//! where `Y↓`, `Y↑` are its responses at the neighbouring levels.
//!
//! Standard errors are delete-one-block jackknife errors over the
//! independent Latin hypercube blocks; the rank weights are recomputed on
//! every reduced sample.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::conditional::{ConditionalLaw, DiscreteLaw, GaussianParams};
use crate::distortion::{rank_weights, PathIntegral, WeightFunction};
use crate::error::{Error, Result};
use crate::perturbation::{cascade_sample, CascadeSpec, CompactLaw, DiscreteLevels, ProtectedSpec};
use crate::predictors::{Feature, FeatureLayout, PredictionModel, Predictor};
use crate::sampling::{complement, jackknife_se, latin_hypercube, DEFAULT_BATCHES};
use crate::special::{compensated_sum, normal_pdf, normal_quantile, sqrt};

/// Additive noise `ε` in `Y = g(D, X) + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Noise {
    #[default]
    None,
    Gaussian { sd: f64 },
}

impl Noise {
    #[must_use]
    pub fn draw(self, u: f64) -> f64 {
        match self {
            Noise::None => 0.0,
            Noise::Gaussian { sd } => sd * normal_quantile(u),
        }
    }
}

/// Monte Carlo settings of a conditional sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub draws: usize,
    pub batches: usize,
    pub seed: u64,
    /// Smallest admissible sample.
    pub min_draws: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { draws: 100_000, batches: DEFAULT_BATCHES, seed: 0, min_draws: 1000 }
    }
}

impl McOptions {
    #[must_use]
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Which form of the compact and discrete formulas is used.
///
/// `Exact` is the derivative of the perturbation as constructed and is what
/// fair rules use. `Published` reproduces the closed forms with the level
/// mass weighting `Σ v_k Δ_k g 1{D = t_k}` and the compact ratio
/// `φ(z)/f(D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Exact,
    Published,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MarginalContinuous,
    MarginalCompact,
    MarginalDiscreteMean,
    MarginalDiscreteDistortion,
    CascadeContinuous,
    CascadeCompact,
    CascadeDiscrete,
}

impl Method {
    #[must_use]
    pub fn of(spec: &ProtectedSpec, cascade: bool) -> Self {
        match (spec, cascade) {
            (ProtectedSpec::ContinuousUnbounded, false) => Method::MarginalContinuous,
            (ProtectedSpec::ContinuousCompact { .. }, false) => Method::MarginalCompact,
            (ProtectedSpec::Discrete { .. }, false) => Method::MarginalDiscreteDistortion,
            (ProtectedSpec::ContinuousUnbounded, true) => Method::CascadeContinuous,
            (ProtectedSpec::ContinuousCompact { .. }, true) => Method::CascadeCompact,
            (ProtectedSpec::Discrete { .. }, true) => Method::CascadeDiscrete,
        }
    }
}

/// A protected attribute together with its perturbation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub index: usize,
    pub spec: ProtectedSpec,
}

impl Attribute {
    #[must_use]
    pub fn continuous(index: usize) -> Self {
        Self { index, spec: ProtectedSpec::ContinuousUnbounded }
    }
    #[must_use]
    pub fn compact(index: usize, law: CompactLaw) -> Self {
        Self { index, spec: ProtectedSpec::ContinuousCompact { law } }
    }
    #[must_use]
    pub fn discrete(index: usize, levels: DiscreteLevels) -> Self {
        Self { index, spec: ProtectedSpec::Discrete { levels } }
    }
}

/// Model, conditional law of `D` and noise.
#[derive(Clone, Copy)]
pub struct Scenario<'a> {
    pub model: &'a dyn Predictor,
    pub law: &'a dyn ConditionalLaw,
    pub noise: Noise,
}

/// Point estimate with jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Draws of `(D, ε)` given `X = x` and the resulting responses.
#[derive(Debug, Clone)]
pub struct ConditionalSample {
    pub x: Vec<f64>,
    /// Row-major draws of `D`, `m` columns.
    pub d: Vec<f64>,
    pub m: usize,
    pub eps: Vec<f64>,
    /// `g(D, x) + ε`.
    pub y: Vec<f64>,
    pub batches: Vec<Range<usize>>,
}

impl ConditionalSample {
    #[must_use]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[must_use]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.d[j * self.m..(j + 1) * self.m]
    }

    /// Input vector `(d_j, x)` of draw `j`.
    #[must_use]
    pub fn features(&self, j: usize) -> Vec<f64> {
        let mut f = self.row(j).to_vec();
        f.extend_from_slice(&self.x);
        f
    }
}

/// Samples `D | X = x` and `ε` on a replicated Latin hypercube.
pub fn conditional_sample(scenario: &Scenario<'_>, x: &[f64], mc: &McOptions) -> Result<ConditionalSample> {
    if mc.draws < mc.min_draws {
        return Err(Error::Estimation(format!(
            "conditional sample of {} draws is below the minimum of {}",
            mc.draws, mc.min_draws
        )));
    }
    let model = scenario.model;
    let m = scenario.law.protected_dim();
    if model.protected_dim() != m || model.covariate_dim() != x.len() {
        return Err(Error::invalid("model, law and query point disagree on dimensions"));
    }
    let k = scenario.law.uniform_dim();
    let design = latin_hypercube(mc.seed, mc.draws, k + 1, mc.batches);
    let mut u_law = Vec::with_capacity(mc.draws * k);
    let mut eps = Vec::with_capacity(mc.draws);
    for j in 0..mc.draws {
        let p = design.point(j);
        u_law.extend_from_slice(&p[..k]);
        eps.push(scenario.noise.draw(p[k]));
    }
    let d = scenario.law.sample(x, &u_law)?;
    let y: Vec<f64> = (0..mc.draws).map(|j| model.eval(&d[j * m..(j + 1) * m], x) + eps[j]).collect();
    crate::error::ensure_finite(&y, "simulated responses")?;
    Ok(ConditionalSample { x: x.to_vec(), d, m, eps, y, batches: design.batches })
}

/// A per-draw sensitivity direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub method: Method,
    /// Representer `W_j`: the first-order change of `Y_j` per unit `δ`.
    pub w: Vec<f64>,
    /// For exact discrete schemes, `(c, ΔY)` pairs whose contributions are
    /// `c (Γ(Y + ΔY) − Γ(Y))`; empty otherwise.
    pub jumps: Vec<[(f64, f64); 2]>,
}

/// `v_k = −Φ⁻¹(p) φ(Φ⁻¹(p))`.
#[must_use]
pub fn v_weight(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let z = normal_quantile(p);
    -z * normal_pdf(z)
}

/// `v_k` at the cumulative masses `p_1, …, p_{K−1}`.
#[must_use]
pub fn v_weights(levels: &DiscreteLevels) -> Vec<f64> {
    levels.cumulative()[..levels.len() - 1].iter().map(|&p| v_weight(p)).collect()
}

fn feature_of(flat: usize, m: usize) -> Feature {
    if flat < m {
        Feature::Protected(flat)
    } else {
        Feature::Covariate(flat - m)
    }
}

fn split_eval(model: &dyn Predictor, f: &[f64], m: usize) -> f64 {
    model.eval(&f[..m], &f[m..])
}

/// `∂_i g + Σ_l ∂_l g · ∂_t F⁻¹_{l|D_i}(V_l | D_i)` at one draw.
fn total_slope(model: &dyn Predictor, f: &[f64], m: usize, i: usize, cascade: Option<&CascadeSpec>) -> Result<f64> {
    let (d, x) = f.split_at(m);
    let mut s = model.partial(Feature::Protected(i), d, x)?.value;
    if let Some(spec) = cascade {
        let v = spec.rosenblatt(f)?;
        for l in spec.propagated() {
            let slope = spec.slope(l, v[l], f[i])?;
            if slope != 0.0 {
                s += model.partial(feature_of(l, m), d, x)?.value * slope;
            }
        }
    }
    Ok(s)
}

/// Per-draw direction of attribute `attr` on a conditional sample.
pub fn direction(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    convention: Convention,
) -> Result<Direction> {
    let m = sample.m;
    let i = attr.index;
    if i >= m {
        return Err(Error::invalid("protected index out of range"));
    }
    if let Some(spec) = cascade {
        if spec.protected != i || spec.quantiles.len() != m + sample.x.len() {
            return Err(Error::invalid("cascade spec does not match the attribute or the input dimension"));
        }
    }
    let method = Method::of(&attr.spec, cascade.is_some());
    let n = sample.len();
    let mut w = Vec::with_capacity(n);
    let mut jumps = Vec::new();
    match &attr.spec {
        ProtectedSpec::ContinuousUnbounded => {
            for j in 0..n {
                let f = sample.features(j);
                w.push(f[i] * total_slope(model, &f, m, i, cascade)?);
            }
        }
        ProtectedSpec::ContinuousCompact { law } => {
            law.validate()?;
            for j in 0..n {
                let f = sample.features(j);
                let dens = law.pdf(f[i]);
                if !(dens > 0.0) {
                    return Err(Error::Numerical(format!("compact density vanishes at sampled value {}", f[i])));
                }
                let z = law.latent(f[i]);
                let factor = match convention {
                    Convention::Exact => z * normal_pdf(z) / dens,
                    Convention::Published => normal_pdf(z) / dens,
                };
                let factor = if factor.is_finite() { factor } else { 0.0 };
                w.push(if factor == 0.0 { 0.0 } else { factor * total_slope(model, &f, m, i, cascade)? });
            }
        }
        ProtectedSpec::Discrete { levels } => {
            let v = v_weights(levels);
            let kmax = levels.len() - 1;
            let moved = |f: &[f64], t: f64| -> Result<f64> {
                match cascade {
                    None => {
                        let mut g = f.to_vec();
                        g[i] = t;
                        Ok(split_eval(model, &g, m))
                    }
                    Some(spec) => {
                        let vv = spec.rosenblatt(f)?;
                        Ok(split_eval(model, &cascade_sample(spec, f, t, &vv)?, m))
                    }
                }
            };
            if convention == Convention::Exact {
                jumps.reserve(n);
            }
            for j in 0..n {
                let f = sample.features(j);
                let k0 = levels
                    .index_of(f[i])
                    .ok_or_else(|| Error::InvalidInput(format!("sampled value {} is not a level", f[i])))?;
                let g0 = split_eval(model, &f, m);
                let up = if k0 < kmax { moved(&f, levels.levels()[k0 + 1])? - g0 } else { 0.0 };
                match convention {
                    Convention::Published => {
                        w.push(if k0 < kmax { v[k0] * -up } else { 0.0 });
                    }
                    Convention::Exact => {
                        let mass = levels.mass(k0);
                        let down_pair = if k0 > 0 {
                            (0.5 * v[k0 - 1] / mass, moved(&f, levels.levels()[k0 - 1])? - g0)
                        } else {
                            (0.0, 0.0)
                        };
                        let up_pair = if k0 < kmax { (-0.5 * v[k0] / mass, up) } else { (0.0, 0.0) };
                        w.push(down_pair.0 * down_pair.1 + up_pair.0 * up_pair.1);
                        jumps.push([down_pair, up_pair]);
                    }
                }
            }
        }
    }
    crate::error::ensure_finite(&w, "sensitivity direction")?;
    Ok(Direction { method, w, jumps })
}

/// Statistics of a conditional sample on arbitrary subsets of its draws.
pub struct Evaluation<'a> {
    pub rho: &'a WeightFunction,
    pub y: &'a [f64],
    pub batches: &'a [Range<usize>],
}

impl<'a> Evaluation<'a> {
    #[must_use]
    pub fn new(rho: &'a WeightFunction, sample: &'a ConditionalSample) -> Self {
        Self { rho, y: &sample.y, batches: &sample.batches }
    }

    #[must_use]
    pub fn all(&self) -> Vec<usize> {
        (0..self.y.len()).collect()
    }

    fn sub(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&j| self.y[j]).collect()
    }

    /// `γ̄_j` for the draws in `idx`.
    pub fn weights(&self, idx: &[usize]) -> Result<Vec<f64>> {
        rank_weights(self.rho, &self.sub(idx), None)
    }

    /// `ρ_γ` of the draws in `idx`.
    pub fn risk(&self, idx: &[usize]) -> Result<f64> {
        let g = self.weights(idx)?;
        Ok(compensated_sum(idx.iter().zip(&g).map(|(&j, gj)| self.y[j] * gj)) / idx.len() as f64)
    }

    /// Sensitivity along `dir` on the draws in `idx`.
    pub fn sensitivity(&self, dir: &Direction, idx: &[usize]) -> Result<f64> {
        let n = idx.len() as f64;
        if dir.jumps.is_empty() {
            let g = self.weights(idx)?;
            Ok(compensated_sum(idx.iter().zip(&g).map(|(&j, gj)| dir.w[j] * gj)) / n)
        } else {
            let path = PathIntegral::new(self.rho, &self.sub(idx))?;
            Ok(compensated_sum(idx.iter().map(|&j| {
                let y = self.y[j];
                let base = path.eval(y);
                dir.jumps[j]
                    .iter()
                    .filter(|(c, _)| *c != 0.0)
                    .map(|(c, dy)| c * (path.eval(y + dy) - base))
                    .sum::<f64>()
            })) / n)
        }
    }

    /// Sample mean of `a_j b_j`.
    #[must_use]
    pub fn mean_product(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
        compensated_sum(idx.iter().map(|&j| a[j] * b[j])) / idx.len() as f64
    }

    /// Point estimate on all draws and jackknife error over the blocks.
    pub fn estimate(&self, stat: impl Fn(&[usize]) -> Result<f64>) -> Result<Estimate> {
        let value = stat(&self.all())?;
        let nb = self.batches.len();
        let mut leave = Vec::with_capacity(nb);
        for b in 0..nb {
            leave.push(stat(&complement(self.batches, b))?);
        }
        let se = jackknife_se(nb, |b| leave[b]);
        Ok(Estimate { value, se })
    }
}

/// Sensitivity of `ρ_γ(Y | X = x)` to `attr` under its scheme.
pub fn sensitivity(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    x: &[f64],
    cascade: Option<&CascadeSpec>,
    convention: Convention,
    mc: &McOptions,
) -> Result<Estimate> {
    let sample = conditional_sample(scenario, x, mc)?;
    let dir = direction(scenario.model, &sample, attr, cascade, convention)?;
    let eval = Evaluation::new(rho, &sample);
    eval.estimate(|idx| eval.sensitivity(&dir, idx))
}

/// `E[D_i ∂_i g γ(U_{Y|X}) | X = x]` under `D_i(1 + δ)`.
pub fn marginal_continuous(scenario: &Scenario<'_>, rho: &WeightFunction, i: usize, x: &[f64], mc: &McOptions) -> Result<Estimate> {
    sensitivity(scenario, rho, &Attribute::continuous(i), x, None, Convention::Exact, mc)
}

/// Sensitivity under the compact perturbation `F⁻¹(Φ(Φ⁻¹(F(D_i))(1 + δ)))`.
pub fn marginal_compact(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    i: usize,
    x: &[f64],
    law: &CompactLaw,
    convention: Convention,
    mc: &McOptions,
) -> Result<Estimate> {
    sensitivity(scenario, rho, &Attribute::compact(i, law.clone()), x, None, convention, mc)
}

/// Sensitivity under the discrete perturbation of the cumulative masses.
pub fn marginal_discrete(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    i: usize,
    x: &[f64],
    levels: &DiscreteLevels,
    convention: Convention,
    mc: &McOptions,
) -> Result<Estimate> {
    sensitivity(scenario, rho, &Attribute::discrete(i, levels.clone()), x, None, convention, mc)
}

/// Cascade sensitivity of attribute `cascade.protected` under `variant`.
pub fn cascade(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    x: &[f64],
    spec: &CascadeSpec,
    variant: &ProtectedSpec,
    convention: Convention,
    mc: &McOptions,
) -> Result<Estimate> {
    let attr = Attribute { index: spec.protected, spec: variant.clone() };
    sensitivity(scenario, rho, &attr, x, Some(spec), convention, mc)
}

/// Expected-value sensitivity to a discrete attribute computed from the
/// conditional class probabilities (no sampling).
pub fn marginal_discrete_mean(model: &dyn Predictor, law: &DiscreteLaw, x: &[f64], convention: Convention) -> Result<f64> {
    if model.protected_dim() != 1 {
        return Err(Error::invalid("the class-probability form needs a single protected attribute"));
    }
    let levels = &law.levels;
    let q = law.probabilities(x)?;
    let v = v_weights(levels);
    let t = levels.levels();
    let mut s = 0.0;
    for k in 0..levels.len() - 1 {
        let delta = model.eval(&[t[k]], x) - model.eval(&[t[k + 1]], x);
        s += match convention {
            Convention::Published => v[k] * delta * q[k],
            Convention::Exact => 0.5 * v[k] * delta * (q[k] / levels.mass(k) + q[k + 1] / levels.mass(k + 1)),
        };
    }
    Ok(s)
}

/// The two-branch model `Y = 1{X₁ = 0} D + 1{X₁ = 1} X₂` with
/// `X₁ ~ Bernoulli(p)`, `D ~ U(0, c)` and `X₂ ≡ x2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoBranch {
    pub p: f64,
    pub c: f64,
    pub x2: f64,
}

impl TwoBranch {
    /// Draws `(x₁, d, y)` from two uniforms.
    #[must_use]
    pub fn draw(&self, u1: f64, u2: f64) -> (bool, f64, f64) {
        let x1 = u1 < self.p;
        let d = self.c * u2;
        (x1, d, if x1 { self.x2 } else { d })
    }

    /// `F_Y⁻¹(u)` for `c ≤ x2`.
    #[must_use]
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 1.0 - self.p {
            self.c * (u / (1.0 - self.p)).min(1.0)
        } else {
            self.x2
        }
    }
}

/// Unconditional plug-in sensitivity of `ρ_γ(Y)` to `D(1 + δ)` in the
/// two-branch model.
pub fn example32_check(model: &TwoBranch, rho: &WeightFunction, draws: usize, seed: u64) -> Result<Estimate> {
    if !(model.p >= 0.0 && model.p <= 1.0 && model.c >= 0.0) {
        return Err(Error::invalid("two-branch model needs p ∈ [0, 1] and c ≥ 0"));
    }
    let design = latin_hypercube(seed, draws, 2, DEFAULT_BATCHES);
    let mut y = Vec::with_capacity(draws);
    let mut w = Vec::with_capacity(draws);
    for j in 0..draws {
        let p = design.point(j);
        let (x1, d, yj) = model.draw(p[0], p[1]);
        y.push(yj);
        w.push(if x1 { 0.0 } else { d });
    }
    let eval = Evaluation { rho, y: &y, batches: &design.batches };
    let dir = Direction { method: Method::MarginalContinuous, w, jumps: Vec::new() };
    eval.estimate(|idx| eval.sensitivity(&dir, idx))
}

/// Linear model `Y = β₀ + β_X X + β_D D + ε` with `(X, D)` bivariate normal
/// and `ε ~ N(0, σ_ε²)`, for which every quantity is available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinear {
    pub params: GaussianParams,
    pub beta0: f64,
    pub beta_x: f64,
    pub beta_d: f64,
    pub sigma_eps: f64,
}

impl Default for GaussianLinear {
    fn default() -> Self {
        Self { params: GaussianParams::default(), beta0: 1.0, beta_x: 2.0, beta_d: 1.0, sigma_eps: 0.5 }
    }
}

impl GaussianLinear {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.sigma_eps >= 0.0) || ![self.beta0, self.beta_x, self.beta_d].iter().all(|b| b.is_finite()) {
            return Err(Error::invalid("linear gaussian model needs finite coefficients and σ_ε ≥ 0"));
        }
        Ok(())
    }

    /// `g(d, x) = β₀ + β_D d + β_X x` as a fitted-model record.
    pub fn model(&self) -> Result<PredictionModel> {
        PredictionModel::linear(self.beta0, vec![self.beta_d, self.beta_x], FeatureLayout::continuous(&["d"], &["x"]))
    }

    #[must_use]
    pub fn noise(&self) -> Noise {
        if self.sigma_eps > 0.0 {
            Noise::Gaussian { sd: self.sigma_eps }
        } else {
            Noise::None
        }
    }

    /// Mean and standard deviation of `Y | X = x`.
    #[must_use]
    pub fn y_moments(&self, x: f64) -> (f64, f64) {
        let m = self.params.cond_mean(x);
        let s2 = self.params.cond_var();
        (
            self.beta0 + self.beta_x * x + self.beta_d * m,
            sqrt(self.beta_d * self.beta_d * s2 + self.sigma_eps * self.sigma_eps),
        )
    }

    /// `ρ_γ(Y | X = x) = μ_Y ∫γ + σ_Y ∫Φ⁻¹γ`.
    #[must_use]
    pub fn risk(&self, rho: &WeightFunction, x: f64) -> f64 {
        let (mu, sd) = self.y_moments(x);
        mu * rho.total_mass() + sd * rho.normal_score_moment()
    }

    /// `E[D γ(U_{Y|X}) | X = x]`.
    #[must_use]
    pub fn weighted_d(&self, rho: &WeightFunction, x: f64) -> f64 {
        let (_, sd) = self.y_moments(x);
        let m = self.params.cond_mean(x);
        let s2 = self.params.cond_var();
        let tilt = if sd > 0.0 { self.beta_d * s2 / sd } else { 0.0 };
        m * rho.total_mass() + tilt * rho.normal_score_moment()
    }

    /// Marginal sensitivity `β_D E[D γ(U) | X = x]`.
    #[must_use]
    pub fn sensitivity(&self, rho: &WeightFunction, x: f64) -> f64 {
        self.beta_d * self.weighted_d(rho, x)
    }

    /// Cascade sensitivity `(β_D + β_X τ σ_X/σ_D) E[D γ(U) | X = x]`.
    #[must_use]
    pub fn cascade_sensitivity(&self, rho: &WeightFunction, x: f64) -> f64 {
        (self.beta_d + self.beta_x * self.params.quantile_slope()) * self.weighted_d(rho, x)
    }

    /// Cascade specification propagating `D` into `X`.
    pub fn cascade_spec(&self) -> Result<CascadeSpec> {
        CascadeSpec::new(0, vec![None, Some(self.params.x_given_d())], vec![])
    }
}

/// Sensitivities at several query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub method: Method,
    pub protected: usize,
    pub rho: String,
    pub estimator: String,
    pub draws: usize,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

/// Simulated sensitivities at every query point, sharing the seed across
/// points (common random numbers).
#[allow(clippy::too_many_arguments)]
pub fn report(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    points: &[Vec<f64>],
    cascade: Option<&CascadeSpec>,
    convention: Convention,
    mc: &McOptions,
) -> Result<SensitivityReport> {
    let mut values = Vec::with_capacity(points.len());
    let mut ses = Vec::with_capacity(points.len());
    for x in points {
        let e = sensitivity(scenario, rho, attr, x, cascade, convention, mc)?;
        values.push(e.value);
        ses.push(e.se);
    }
    Ok(SensitivityReport {
        method: Method::of(&attr.spec, cascade.is_some()),
        protected: attr.index,
        rho: rho.label.clone(),
        estimator: String::from("simulation"),
        draws: mc.draws,
        seed: mc.seed,
        points: points.to_vec(),
        values,
        standard_errors: ses,
    })
}
