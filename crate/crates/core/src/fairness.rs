//! Marginally fair decision rules.
//!
//! A fair rule subtracts from `ρ_γ(Y | X = x)` the multiple `λ E[Y W | X = x]`
//! of a per-draw direction `W`, with `λ = ∂ρ / E[W² | X = x]`, which is the
//! same as replacing the weights `γ̄_j` by `γ̄_j − λ W_j`. By default `W` is the
//! representer of the sensitivity under the attribute's perturbation scheme,
//! so the frozen correction cancels the first-order change of the decision.
//! Several protected attributes lead to a small linear system for the
//! multipliers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::conditional::{cond_cross_term, cond_squared_term, gaussian_expectation, ConditionalBackend, GaussianParams};
use crate::distortion::WeightFunction;
use crate::error::{Error, Result};
use crate::linalg::solve_partial_pivot;
use crate::perturbation::{CascadeSpec, ProtectedSpec};
use crate::predictors::{Feature, Predictor};
use crate::sensitivity::{
    conditional_sample, direction, ConditionalSample, Convention, Estimate, Evaluation, GaussianLinear, McOptions,
    Scenario,
};
use crate::sensitivity::Attribute;
use crate::special::compensated_sum;

/// Smallest admissible `E[W² | X = x]`.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Condition number above which a multi-marginal system is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Which sensitivity the rule neutralizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Marginal,
    Cascade,
}

/// Per-draw direction removed from the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FairDirection {
    /// The representer of the sensitivity (cascade slopes and compact
    /// density factors included).
    #[default]
    Representer,
    /// `D_i ∂_i g` for continuous attributes and `D_i (g(t_{k+1}) − g(t_k))`
    /// for discrete ones.
    ProtectedSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairOptions {
    pub convention: Convention,
    pub direction: FairDirection,
    pub floor: f64,
}

impl Default for FairOptions {
    fn default() -> Self {
        Self { convention: Convention::Exact, direction: FairDirection::Representer, floor: DENOMINATOR_FLOOR }
    }
}

/// The ingredients and result of one fair adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    /// `ρ_γ(Y | X = x)`.
    pub risk: f64,
    pub sensitivity: f64,
    /// `E[W² | X = x]`.
    pub denominator: f64,
    /// `E[Y W | X = x]`.
    pub cross: f64,
    /// `λ = sensitivity / denominator`.
    pub multiplier: f64,
    pub correction: f64,
    /// `risk − correction`.
    pub value: f64,
}

/// Combines the three ingredients into the fair decision.
pub fn adjust(risk: f64, sensitivity: f64, denominator: f64, cross: f64, floor: f64) -> Result<Adjustment> {
    if ![risk, sensitivity, denominator, cross].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite fair-rule ingredient (risk {risk}, sensitivity {sensitivity}, denominator {denominator}, cross {cross})"
        )));
    }
    if !(denominator > floor) {
        return Err(Error::DegenerateDenominator { value: denominator, floor });
    }
    let multiplier = sensitivity / denominator;
    let correction = multiplier * cross;
    Ok(Adjustment { risk, sensitivity, denominator, cross, multiplier, correction, value: risk - correction })
}

/// Fair rule evaluated at several query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairRule {
    pub rho: String,
    pub protected: Vec<usize>,
    pub variant: Variant,
    pub points: Vec<Vec<f64>>,
    pub adjustments: Vec<Adjustment>,
}

/// A fair rule on one conditional sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFairRule {
    pub adjustment: Adjustment,
    /// `γ̄_j`.
    pub base_weights: Vec<f64>,
    /// `W_j`.
    pub direction: Vec<f64>,
}

impl SampleFairRule {
    /// `γ*_j = γ̄_j − λ W_j`.
    #[must_use]
    pub fn weights(&self) -> Vec<f64> {
        let l = self.adjustment.multiplier;
        self.base_weights.iter().zip(&self.direction).map(|(g, w)| g - l * w).collect()
    }

    /// `λ W_j`, held fixed when the adjusted rule is re-evaluated under a
    /// perturbation.
    #[must_use]
    pub fn frozen_adjustment(&self) -> Vec<f64> {
        self.direction.iter().map(|w| self.adjustment.multiplier * w).collect()
    }
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y)) / a.len() as f64
}

fn model_values(sample: &ConditionalSample) -> Vec<f64> {
    sample.y.iter().zip(&sample.eps).map(|(y, e)| y - e).collect()
}

/// Per-draw direction `W_j` removed by the fair rule.
pub fn fair_direction(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
) -> Result<Vec<f64>> {
    match opts.direction {
        FairDirection::Representer => Ok(direction(model, sample, attr, cascade, opts.convention)?.w),
        FairDirection::ProtectedSlope => protected_slope(model, sample, attr),
    }
}

fn protected_slope(model: &dyn Predictor, sample: &ConditionalSample, attr: &Attribute) -> Result<Vec<f64>> {
    let m = sample.m;
    let i = attr.index;
    if i >= m {
        return Err(Error::invalid("protected index out of range"));
    }
    let mut out = Vec::with_capacity(sample.len());
    for j in 0..sample.len() {
        let f = sample.features(j);
        let (d, x) = f.split_at(m);
        let step = match &attr.spec {
            ProtectedSpec::Discrete { levels } => {
                let k = levels
                    .index_of(d[i])
                    .ok_or_else(|| Error::InvalidInput(format!("sampled value {} is not a level", d[i])))?;
                if k + 1 < levels.len() {
                    let mut up = d.to_vec();
                    up[i] = levels.levels()[k + 1];
                    model.eval(&up, x) - model.eval(d, x)
                } else {
                    0.0
                }
            }
            _ => model.partial(Feature::Protected(i), d, x)?.value,
        };
        out.push(d[i] * step);
    }
    Ok(out)
}

/// Fair rule for `attr` on an existing conditional sample.
pub fn fair_rule_on_sample(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    rho: &WeightFunction,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
) -> Result<SampleFairRule> {
    let dir = direction(model, sample, attr, cascade, opts.convention)?;
    let w = match opts.direction {
        FairDirection::Representer => dir.w.clone(),
        FairDirection::ProtectedSlope => protected_slope(model, sample, attr)?,
    };
    let eval = Evaluation::new(rho, sample);
    let idx = eval.all();
    let base_weights = eval.weights(&idx)?;
    let risk = mean_product(&sample.y, &base_weights);
    let sensitivity = eval.sensitivity(&dir, &idx)?;
    let adjustment = adjust(risk, sensitivity, mean_product(&w, &w), mean_product(&sample.y, &w), opts.floor)?;
    Ok(SampleFairRule { adjustment, base_weights, direction: w })
}

/// Fair decision on a sample with a delete-one-block jackknife error; the
/// multiplier is re-estimated on every reduced sample.
pub fn fair_rule_estimate(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    rho: &WeightFunction,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
) -> Result<Estimate> {
    let dir = direction(model, sample, attr, cascade, opts.convention)?;
    let w = match opts.direction {
        FairDirection::Representer => dir.w.clone(),
        FairDirection::ProtectedSlope => protected_slope(model, sample, attr)?,
    };
    let eval = Evaluation::new(rho, sample);
    eval.estimate(|idx| {
        let g = eval.weights(idx)?;
        let n = idx.len() as f64;
        let risk = compensated_sum(idx.iter().zip(&g).map(|(&j, gj)| sample.y[j] * gj)) / n;
        let sens = eval.sensitivity(&dir, idx)?;
        let denom = compensated_sum(idx.iter().map(|&j| w[j] * w[j])) / n;
        let cross = compensated_sum(idx.iter().map(|&j| sample.y[j] * w[j])) / n;
        Ok(adjust(risk, sens, denom, cross, opts.floor)?.value)
    })
}

/// Fair decision `ρ*(Y | X = x)` for one protected attribute.
pub fn fair_rule(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    x: &[f64],
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
    mc: &McOptions,
) -> Result<Adjustment> {
    let sample = conditional_sample(scenario, x, mc)?;
    Ok(fair_rule_on_sample(scenario.model, &sample, rho, attr, cascade, opts)?.adjustment)
}

/// Adjusted weights `γ*_j` together with the sample they live on.
pub fn fair_weight(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    x: &[f64],
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
    mc: &McOptions,
) -> Result<(ConditionalSample, SampleFairRule)> {
    let sample = conditional_sample(scenario, x, mc)?;
    let rule = fair_rule_on_sample(scenario.model, &sample, rho, attr, cascade, opts)?;
    Ok((sample, rule))
}

/// Fair rules at several query points with a shared seed.
#[allow(clippy::too_many_arguments)]
pub fn fair_rule_report(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    attr: &Attribute,
    points: &[Vec<f64>],
    cascade: Option<&CascadeSpec>,
    opts: &FairOptions,
    mc: &McOptions,
) -> Result<FairRule> {
    let adjustments =
        points.iter().map(|x| fair_rule(scenario, rho, attr, x, cascade, opts, mc)).collect::<Result<Vec<_>>>()?;
    Ok(FairRule {
        rho: rho.label.clone(),
        protected: vec![attr.index],
        variant: if cascade.is_some() { Variant::Cascade } else { Variant::Marginal },
        points: points.to_vec(),
        adjustments,
    })
}

/// One protected attribute of a multi-marginal rule.
#[derive(Clone, Copy)]
pub struct Constraint<'a> {
    pub attr: &'a Attribute,
    pub cascade: Option<&'a CascadeSpec>,
}

/// The multi-marginal adjustment at one query point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAdjustment {
    pub risk: f64,
    pub sensitivities: Vec<f64>,
    /// `A_{l'l} = E[W_{l'} W_l | X = x]`, row-major.
    pub system: Vec<f64>,
    pub cross: Vec<f64>,
    /// Multipliers `η_l` solving `A η = sensitivities`.
    pub multipliers: Vec<f64>,
    pub condition: f64,
    pub ill_conditioned: bool,
    /// `sensitivities − A η`.
    pub residuals: Vec<f64>,
    pub correction: f64,
    pub value: f64,
}

/// A multi-marginal rule on one conditional sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMultiRule {
    pub adjustment: MultiAdjustment,
    pub base_weights: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl SampleMultiRule {
    /// `Σ_l η_l W_{l,j}` per draw.
    #[must_use]
    pub fn frozen_adjustment(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.base_weights.len()];
        for (eta, w) in self.adjustment.multipliers.iter().zip(&self.directions) {
            for (aj, wj) in a.iter_mut().zip(w) {
                *aj += eta * wj;
            }
        }
        a
    }

    /// `γ*_j = γ̄_j − Σ_l η_l W_{l,j}`.
    #[must_use]
    pub fn weights(&self) -> Vec<f64> {
        self.base_weights.iter().zip(self.frozen_adjustment()).map(|(g, a)| g - a).collect()
    }
}

/// Multi-marginal fair rule on an existing sample; every system entry is
/// computed from the same draws.
pub fn multi_marginal_on_sample(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    rho: &WeightFunction,
    constraints: &[Constraint<'_>],
    opts: &FairOptions,
) -> Result<SampleMultiRule> {
    let m = constraints.len();
    if m == 0 {
        return Err(Error::invalid("a multi-marginal rule needs at least one protected attribute"));
    }
    let eval = Evaluation::new(rho, sample);
    let idx = eval.all();
    let base_weights = eval.weights(&idx)?;
    let risk = mean_product(&sample.y, &base_weights);
    let mut sensitivities = Vec::with_capacity(m);
    let mut directions = Vec::with_capacity(m);
    for c in constraints {
        let dir = direction(model, sample, c.attr, c.cascade, opts.convention)?;
        sensitivities.push(eval.sensitivity(&dir, &idx)?);
        directions.push(match opts.direction {
            FairDirection::Representer => dir.w,
            FairDirection::ProtectedSlope => protected_slope(model, sample, c.attr)?,
        });
    }
    let mut system = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            system[r * m + c] = mean_product(&directions[r], &directions[c]);
        }
    }
    for l in 0..m {
        let diag = system[l * m + l];
        if !(diag > opts.floor) {
            return Err(Error::DegenerateDenominator { value: diag, floor: opts.floor });
        }
    }
    let cross: Vec<f64> = directions.iter().map(|w| mean_product(&sample.y, w)).collect();
    let solution = solve_partial_pivot(&system, &sensitivities).ok_or(Error::NoFairRule)?;
    let multipliers = solution.x;
    let residuals = (0..m)
        .map(|r| sensitivities[r] - (0..m).map(|c| system[r * m + c] * multipliers[c]).sum::<f64>())
        .collect();
    let correction = compensated_sum(multipliers.iter().zip(&cross).map(|(e, c)| e * c));
    let adjustment = MultiAdjustment {
        risk,
        sensitivities,
        system,
        cross,
        multipliers,
        condition: solution.condition,
        ill_conditioned: solution.condition > ILL_CONDITIONED,
        residuals,
        correction,
        value: risk - correction,
    };
    Ok(SampleMultiRule { adjustment, base_weights, directions })
}

/// Multi-marginal fair decision at `x`.
pub fn multi_marginal_rule(
    scenario: &Scenario<'_>,
    rho: &WeightFunction,
    constraints: &[Constraint<'_>],
    x: &[f64],
    opts: &FairOptions,
    mc: &McOptions,
) -> Result<MultiAdjustment> {
    let sample = conditional_sample(scenario, x, mc)?;
    Ok(multi_marginal_on_sample(scenario.model, &sample, rho, constraints, opts)?.adjustment)
}

/// `c_x = E[D | X = x]² / E[D² | X = x]`.
#[must_use]
pub fn c_x(params: &GaussianParams, x: f64) -> f64 {
    let m = params.cond_mean(x);
    m * m / (params.cond_var() + m * m)
}

/// `c̄_x = ∂_D ρ_γ · E[D | X = x] / (β_D E[D² | X = x])`.
#[must_use]
pub fn c_bar(model: &GaussianLinear, rho: &WeightFunction, x: f64) -> f64 {
    let m = model.params.cond_mean(x);
    model.sensitivity(rho, x) * m / (model.beta_d * (model.params.cond_var() + m * m))
}

/// Fair rule of the linear gaussian model in closed form, for any `γ`.
///
/// With `W = k D` and `k = β_D` (marginal) or `β_D + β_X τ σ_X/σ_D`
/// (cascade), `E[W²] = k²(s² + m²)` and `E[Y W] = k((β₀ + β_X x) m + β_D (s² + m²))`.
pub fn gaussian_linear_fair_rule(
    model: &GaussianLinear,
    rho: &WeightFunction,
    x: f64,
    variant: Variant,
    floor: f64,
) -> Result<Adjustment> {
    model.validate()?;
    let p = &model.params;
    let k = match variant {
        Variant::Marginal => model.beta_d,
        Variant::Cascade => model.beta_d + model.beta_x * p.quantile_slope(),
    };
    let m = p.cond_mean(x);
    let second = p.cond_var() + m * m;
    adjust(
        model.risk(rho, x),
        k * model.weighted_d(rho, x),
        k * k * second,
        k * ((model.beta0 + model.beta_x * x) * m + model.beta_d * second),
        floor,
    )
}

/// Expected-value fair rule of the linear gaussian model with cascade
/// sensitivity, evaluated from the printed coefficients
/// `β₀† = β₀(1 − c_x) − β₀β_X(1 − c_x/β_D) H(x)` and
/// `β₁† = β_X(1 − c_x) + (β_X²/β_D) c_x H(x)` with `H(x) = τ (σ_X/σ_D) E[D | X = x]`.
///
/// Away from `τ = 0` or `E[D | X = x] = 0` this differs from
/// [`gaussian_linear_fair_rule`] with [`Variant::Cascade`].
pub fn cascade_fair_closed_form(model: &GaussianLinear, x: f64) -> Result<f64> {
    model.validate()?;
    if model.beta_d == 0.0 {
        return Err(Error::DegenerateDenominator { value: 0.0, floor: DENOMINATOR_FLOOR });
    }
    let p = &model.params;
    let c = c_x(p, x);
    let h = p.quantile_slope() * p.cond_mean(x);
    let (b0, b1, b2) = (model.beta0, model.beta_x, model.beta_d);
    let beta0 = b0 * (1.0 - c) - b0 * b1 * (1.0 - c / b2) * h;
    let beta1 = b1 * (1.0 - c) + b1 * b1 / b2 * c * h;
    Ok(beta0 + beta1 * x)
}

/// Expected-value fair rule of a scalar `g(d, x)` under the bivariate
/// gaussian law, with every conditional moment integrated by quadrature.
///
/// The marginal variant takes its denominator and cross term from the
/// conditional backend; the cascade variant uses
/// `W = D (∂_D g + ∂_X g · τ σ_X/σ_D)`.
pub fn analytic_mean_rule(
    model: &dyn Predictor,
    params: &GaussianParams,
    x: f64,
    variant: Variant,
    floor: f64,
) -> Result<Adjustment> {
    params.validate()?;
    if model.protected_dim() != 1 || model.covariate_dim() != 1 {
        return Err(Error::invalid("the gaussian backend supports g(d, x) with scalar d and x"));
    }
    let xs = [x];
    let kappa = params.quantile_slope();
    let w = |d: f64| -> Result<f64> {
        let mut s = model.partial(Feature::Protected(0), &[d], &xs)?.value;
        if variant == Variant::Cascade {
            s += model.partial(Feature::Covariate(0), &[d], &xs)?.value * kappa;
        }
        Ok(d * s)
    };
    let risk = gaussian_expectation(params, x, |d| Ok(model.eval(&[d], &xs)))?;
    let sensitivity = gaussian_expectation(params, x, w)?;
    let (denominator, cross) = match variant {
        Variant::Marginal => {
            let backend = ConditionalBackend::AnalyticGaussian(*params);
            (cond_squared_term(&backend, model, 0, &xs)?, cond_cross_term(&backend, model, 0, &xs)?)
        }
        Variant::Cascade => (
            gaussian_expectation(params, x, |d| w(d).map(|v| v * v))?,
            gaussian_expectation(params, x, |d| Ok(model.eval(&[d], &xs) * w(d)?))?,
        ),
    };
    adjust(risk, sensitivity, denominator, cross, floor)
}

/// Conditions attached to a decision row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    DegenerateDenominator,
    IllConditioned,
    TailFallback,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::DegenerateDenominator => "degenerate_denominator",
            Flag::IllConditioned => "ill_conditioned",
            Flag::TailFallback => "tail_fallback",
        })
    }
}

/// Decisions of one observation under the four strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub id: usize,
    pub x: Vec<f64>,
    /// `P_U = E[g(D, x) | X = x]`.
    pub unaware: f64,
    /// `P_DF = E[g(D, x)]` over the unconditional law of `D`.
    pub discrimination_free: f64,
    pub fair_ev: f64,
    pub fair_es: f64,
    /// `P_U − P_MF_EV`.
    pub adjustment: f64,
    /// Expected-value denominator `E[W² | X = x]`.
    pub denominator: f64,
    /// Expected-value sensitivity.
    pub sensitivity: f64,
    pub flags: Vec<Flag>,
}

impl Decision {
    /// Builds a row from its expected-value adjustment; a missing
    /// adjustment (degenerate denominator) falls back to `P_U`.
    #[must_use]
    pub fn new(
        id: usize,
        x: Vec<f64>,
        unaware: f64,
        discrimination_free: f64,
        ev: Option<&Adjustment>,
        fair_es: f64,
    ) -> Self {
        let mut flags = Vec::new();
        let (fair_ev, denominator, sensitivity) = match ev {
            Some(a) => (unaware - a.correction, a.denominator, a.sensitivity),
            None => {
                flags.push(Flag::DegenerateDenominator);
                (unaware, 0.0, 0.0)
            }
        };
        Self {
            id,
            x,
            unaware,
            discrimination_free,
            fair_ev,
            fair_es,
            adjustment: unaware - fair_ev,
            denominator,
            sensitivity,
            flags,
        }
    }
}

/// Per-observation decisions under the unaware, discrimination-free and
/// two marginally fair strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSet {
    pub es_level: f64,
    pub variant: Variant,
    pub rows: Vec<Decision>,
}

impl DecisionSet {
    /// Checks that every decision is finite and that the adjustment column
    /// equals `P_U − P_MF_EV`.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let vals = [r.unaware, r.discrimination_free, r.fair_ev, r.fair_es, r.adjustment];
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite decision in row {}", r.id)));
            }
            if r.adjustment != r.unaware - r.fair_ev {
                return Err(Error::Numerical(format!("adjustment mismatch in row {}", r.id)));
            }
        }
        Ok(())
    }
}

/// The four strategies of the linear gaussian model in closed form.
pub fn gaussian_linear_strategies(model: &GaussianLinear, xs: &[f64], es_level: f64, variant: Variant) -> Result<DecisionSet> {
    let ev = WeightFunction::expected_value();
    let es = WeightFunction::expected_shortfall(es_level)?;
    let p = &model.params;
    let mut rows = Vec::with_capacity(xs.len());
    for (id, &x) in xs.iter().enumerate() {
        let base = model.beta0 + model.beta_x * x;
        let unaware = base + model.beta_d * p.cond_mean(x);
        let free = base + model.beta_d * p.mu_d;
        let a = gaussian_linear_fair_rule(model, &ev, x, variant, DENOMINATOR_FLOOR).ok();
        let fair_es = match gaussian_linear_fair_rule(model, &es, x, variant, DENOMINATOR_FLOOR) {
            Ok(b) => b.value,
            Err(_) => model.risk(&es, x),
        };
        rows.push(Decision::new(id, vec![x], unaware, free, a.as_ref(), fair_es));
    }
    let set = DecisionSet { es_level, variant, rows };
    set.validate()?;
    Ok(set)
}

/// The four strategies at `x` estimated on one conditional sample.
///
/// `unconditional` holds draws of the protected vector from its
/// unconditional law, stored row by row.
#[allow(clippy::too_many_arguments)]
pub fn strategies_on_sample(
    model: &dyn Predictor,
    sample: &ConditionalSample,
    attr: &Attribute,
    cascade: Option<&CascadeSpec>,
    unconditional: &[f64],
    es: &WeightFunction,
    opts: &FairOptions,
    id: usize,
) -> Result<Decision> {
    let m = sample.m;
    if unconditional.is_empty() || unconditional.len() % m != 0 {
        return Err(Error::invalid("unconditional protected draws must hold whole rows"));
    }
    let g = model_values(sample);
    let unaware = compensated_sum(g.iter().copied()) / g.len() as f64;
    let free = compensated_sum(unconditional.chunks(m).map(|d| model.eval(d, &sample.x))) / (unconditional.len() / m) as f64;
    let ev = WeightFunction::expected_value();
    let a = match fair_rule_on_sample(model, sample, &ev, attr, cascade, opts) {
        Ok(r) => Some(r.adjustment),
        Err(Error::DegenerateDenominator { .. }) => None,
        Err(e) => return Err(e),
    };
    let fair_es = match fair_rule_on_sample(model, sample, es, attr, cascade, opts) {
        Ok(r) => r.adjustment.value,
        Err(Error::DegenerateDenominator { .. }) => Evaluation::new(es, sample).risk(&(0..sample.len()).collect::<Vec<_>>())?,
        Err(e) => return Err(e),
    };
    Ok(Decision::new(id, sample.x.clone(), unaware, free, a.as_ref(), fair_es))
}

#[cfg(test)]
mod tests {
    use super::*;
    
    fn ev() -> WeightFunction {
        WeightFunction::expected_value()
    }

    #[test]
    fn mean_rule_closed_form() {
        let gl = GaussianLinear::default();
        assert!((c_x(&gl.params, 0.0) - 0.75).abs() < 1e-15);
        let a = gaussian_linear_fair_rule(&gl, &ev(), 0.0, Variant::Marginal, DENOMINATOR_FLOOR).unwrap();
        assert!((a.value - 0.25).abs() < 1e-12);
        for x in [-2.0, -0.5, 1.0, 2.5] {
            let c = c_x(&gl.params, x);
            let a = gaussian_linear_fair_rule(&gl, &ev(), x, Variant::Marginal, DENOMINATOR_FLOOR).unwrap();
            assert!((a.value - (1.0 + 2.0 * x) * (1.0 - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_path_matches_closed_form() {
        let gl = GaussianLinear::default();
        let model = gl.model().unwrap();
        for x in [-1.5, 0.0, 2.0] {
            for v in [Variant::Marginal, Variant::Cascade] {
                let q = analytic_mean_rule(&model, &gl.params, x, v, DENOMINATOR_FLOOR).unwrap();
                let c = gaussian_linear_fair_rule(&gl, &ev(), x, v, DENOMINATOR_FLOOR).unwrap();
                assert!((q.value - c.value).abs() < 1e-6, "{x} {v:?}");
                assert!((q.sensitivity - c.sensitivity).abs() < 1e-6);
            }
        }
        let c = analytic_mean_rule(&model, &gl.params, 0.0, Variant::Cascade, DENOMINATOR_FLOOR).unwrap();
        assert!((c.sensitivity - 4.5).abs() < 1e-6);
    }

    #[test]
    fn printed_cascade_coefficients() {
        let gl = GaussianLinear::default();
        assert!((cascade_fair_closed_form(&gl, 0.0).unwrap() + 0.125).abs() < 1e-12);
        let flat = GaussianLinear { params: GaussianParams { tau: 0.0, ..gl.params }, ..gl };
        for x in [-1.0, 0.0, 2.0] {
            let m = gaussian_linear_fair_rule(&flat, &ev(), x, Variant::Marginal, DENOMINATOR_FLOOR).unwrap();
            assert!((cascade_fair_closed_form(&flat, x).unwrap() - m.value).abs() < 1e-12);
        }
        let risk = gl.risk(&ev(), -3.0);
        assert!((cascade_fair_closed_form(&gl, -3.0).unwrap() - risk).abs() < 1e-12);
        let a = gaussian_linear_fair_rule(&gl, &ev(), -3.0, Variant::Cascade, DENOMINATOR_FLOOR).unwrap();
        assert!((a.value - risk).abs() < 1e-12);
    }

    #[test]
    fn degenerate_when_d_has_no_effect() {
        let gl = GaussianLinear { beta_d: 0.0, ..GaussianLinear::default() };
        let model = gl.model().unwrap();
        let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
        let mc = McOptions { draws: 2000, ..McOptions::default() };
        let e = fair_rule(&scn, &ev(), &Attribute::continuous(0), &[0.0], None, &FairOptions::default(), &mc);
        assert!(matches!(e, Err(Error::DegenerateDenominator { .. })));
        let set = gaussian_linear_strategies(&gl, &[-1.0, 0.0, 1.0], 0.95, Variant::Marginal).unwrap();
        for r in &set.rows {
            assert_eq!(r.fair_ev, r.unaware);
            assert_eq!(r.flags, vec![Flag::DegenerateDenominator]);
        }
    }

    #[test]
    fn reconstruction_and_noop() {
        let gl = GaussianLinear::default();
        let model = gl.model().unwrap();
        let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
        let mc = McOptions { draws: 5000, ..McOptions::default() };
        let es = WeightFunction::expected_shortfall(0.95).unwrap();
        let (s, r) = fair_weight(&scn, &es, &Attribute::continuous(0), &[0.5], None, &FairOptions::default(), &mc).unwrap();
        let rebuilt = mean_product(&s.y, &r.weights());
        assert!((rebuilt - r.adjustment.value).abs() < 1e-10);
        let linear = fair_rule(&scn, &ev(), &Attribute::continuous(0), &[1.0], None, &FairOptions::default(), &mc).unwrap();
        let (_, r) = fair_weight(&scn, &ev(), &Attribute::continuous(0), &[1.0], None, &FairOptions::default(), &mc).unwrap();
        assert_eq!(linear, r.adjustment);
        let a = adjust(2.0, 0.0, 1.0, 5.0, DENOMINATOR_FLOOR).unwrap();
        assert_eq!(a.value, 2.0);
    }

    #[test]
    fn strategies_linear_values() {
        let gl = GaussianLinear::default();
        let set = gaussian_linear_strategies(&gl, &[1.0], 0.95, Variant::Marginal).unwrap();
        assert!((set.rows[0].unaware - 7.0).abs() < 1e-12);
        assert!((set.rows[0].discrimination_free - 6.0).abs() < 1e-12);
        let indep = GaussianLinear { params: GaussianParams { tau: 0.0, ..gl.params }, ..gl };
        let set = gaussian_linear_strategies(&indep, &[-2.0, 0.0, 3.0], 0.95, Variant::Marginal).unwrap();
        assert!(set.rows.iter().all(|r| r.unaware == r.discrimination_free));
    }

    #[test]
    fn multi_with_one_constraint_equals_single() {
        let gl = GaussianLinear::default();
        let model = gl.model().unwrap();
        let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
        let mc = McOptions { draws: 4000, ..McOptions::default() };
        let es = WeightFunction::expected_shortfall(0.9).unwrap();
        let attr = Attribute::continuous(0);
        let single = fair_rule(&scn, &es, &attr, &[0.3], None, &FairOptions::default(), &mc).unwrap();
        let multi =
            multi_marginal_rule(&scn, &es, &[Constraint { attr: &attr, cascade: None }], &[0.3], &FairOptions::default(), &mc)
                .unwrap();
        assert!((single.value - multi.value).abs() < 1e-10);
        assert!(multi.residuals[0].abs() < 1e-10);
    }

    #[test]
    fn repeated_constraint_has_no_rule() {
        let gl = GaussianLinear::default();
        let model = gl.model().unwrap();
        let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
        let a0 = Attribute::continuous(0);
        let mc = McOptions { draws: 2000, ..McOptions::default() };
        let c = Constraint { attr: &a0, cascade: None };
        let r = multi_marginal_rule(&scn, &ev(), &[c, c], &[0.0], &FairOptions::default(), &mc);
        assert!(matches!(r, Err(Error::NoFairRule)), "{r:?}");
    }
}
