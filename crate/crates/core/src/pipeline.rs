//! Simulation study, synthetic insurance portfolio and audit computations.
//!
//! Everything here is pure computation on in-memory data; reading and
//! writing files, hashing configurations and parallel dispatch belong to
//! the `fairrisk` crate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::conditional::{
    fit_conditional_tail, ClassFitOptions, ClassProbabilityModel, ConditionalTail, Basis, TailOptions,
};
use crate::distortion::WeightFunction;
use crate::error::{Error, Result};
use crate::fairness::{
    adjust, c_bar, c_x, cascade_fair_closed_form, fair_rule_estimate, gaussian_linear_fair_rule, Decision, DecisionSet,
    FairOptions, Flag, Variant, DENOMINATOR_FLOOR,
};
use crate::perturbation::DiscreteLevels;
use crate::predictors::{
    fit_glm, EncodedDataset, FeatureKind, FeatureLayout, FitOptions, Link, Loss, ModelFamily, PredictionModel, Predictor,
};
use crate::sampling::{complement, jackknife_se, latin_hypercube};
use crate::sensitivity::{
    conditional_sample, direction, v_weights, Attribute, Convention, Estimate, Evaluation,
    GaussianLinear, McOptions, Scenario,
};
use crate::special::{compensated_sum, ln, normal_quantile};

/// Evenly spaced query points `start, start + step, …, stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self { start: -3.0, stop: 3.0, step: 0.1 }
    }
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::invalid("grid needs finite start ≤ stop and step > 0"));
        }
        let span = (self.stop - self.start) / self.step;
        let count = libm::round(span) as usize + 1;
        if (span - libm::round(span)).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::invalid("grid step does not divide the range"));
        }
        Ok((0..count)
            .map(|k| {
                let v = self.start + k as f64 * self.step;
                libm::round(v * 1e12) / 1e12
            })
            .collect())
    }
}

/// Settings of the gaussian-linear simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub model: GaussianLinear,
    pub grid: Grid,
    pub es_level: f64,
    pub mc: McOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: GaussianLinear::default(),
            grid: Grid::default(),
            es_level: 0.95,
            mc: McOptions { draws: 20_000, ..McOptions::default() },
        }
    }
}

/// Four strategies against `x`, closed form and simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub x: f64,
    pub p_u: f64,
    pub p_df: f64,
    pub p_mf_ev: f64,
    pub p_mf_es: f64,
    pub p_u_mc: f64,
    pub p_u_se: f64,
    pub p_df_mc: f64,
    pub p_df_se: f64,
    pub p_mf_ev_mc: f64,
    pub p_mf_ev_se: f64,
    pub p_mf_es_mc: f64,
    pub p_mf_es_se: f64,
}

/// Coefficient adjustment factors `1 − c_x` (expected value) and `1 − c̄_x` (ES).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentRow {
    pub x: f64,
    pub one_minus_c: f64,
    pub one_minus_c_bar: f64,
    pub one_minus_c_mc: f64,
    pub one_minus_c_se: f64,
    pub one_minus_c_bar_mc: f64,
    pub one_minus_c_bar_se: f64,
}

/// Expected-value fair rules under marginal and cascade sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairRuleRow {
    pub x: f64,
    pub marginal: f64,
    pub cascade: f64,
    /// The printed cascade coefficients `β₀† + β₁† x`.
    pub cascade_printed: f64,
    pub marginal_mc: f64,
    pub marginal_se: f64,
    pub cascade_mc: f64,
    pub cascade_se: f64,
}

/// Marginal and cascade sensitivities for the expected value and ES.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub x: f64,
    pub marginal_ev: f64,
    pub cascade_ev: f64,
    pub marginal_es: f64,
    pub cascade_es: f64,
    pub marginal_ev_mc: f64,
    pub marginal_ev_se: f64,
    pub cascade_ev_mc: f64,
    pub cascade_ev_se: f64,
    pub marginal_es_mc: f64,
    pub marginal_es_se: f64,
    pub cascade_es_mc: f64,
    pub cascade_es_se: f64,
}

/// All series at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPoint {
    pub strategy: StrategyRow,
    pub adjustment: AdjustmentRow,
    pub fair_rule: FairRuleRow,
    pub sensitivity: SensitivityRow,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationSeries {
    pub strategies: Vec<StrategyRow>,
    pub adjustments: Vec<AdjustmentRow>,
    pub fair_rules: Vec<FairRuleRow>,
    pub sensitivities: Vec<SensitivityRow>,
}

impl SimulationSeries {
    #[must_use]
    pub fn from_points(points: &[SimulationPoint]) -> Self {
        Self {
            strategies: points.iter().map(|p| p.strategy).collect(),
            adjustments: points.iter().map(|p| p.adjustment).collect(),
            fair_rules: points.iter().map(|p| p.fair_rule).collect(),
            sensitivities: points.iter().map(|p| p.sensitivity).collect(),
        }
    }
}

/// Statistic on all indices with a delete-one-block jackknife error.
pub fn block_estimate(n: usize, batches: &[Range<usize>], stat: impl Fn(&[usize]) -> Result<f64>) -> Result<Estimate> {
    let all: Vec<usize> = (0..n).collect();
    let value = stat(&all)?;
    let mut leave = Vec::with_capacity(batches.len());
    for b in 0..batches.len() {
        leave.push(stat(&complement(batches, b))?);
    }
    Ok(Estimate { value, se: jackknife_se(batches.len(), |b| leave[b]) })
}

fn subset_mean(v: &[f64], idx: &[usize]) -> f64 {
    compensated_sum(idx.iter().map(|&j| v[j])) / idx.len() as f64
}

/// Stream offset separating the unconditional design from the conditional one.
const UNCONDITIONAL_SEED_OFFSET: u64 = 0x5eed_0000_0000;

/// Every series of the simulation study at one query point.
pub fn simulate_point(cfg: &SimulateConfig, x: f64) -> Result<SimulationPoint> {
    let gl = &cfg.model;
    gl.validate()?;
    let p = &gl.params;
    let ev = WeightFunction::expected_value();
    let es = WeightFunction::expected_shortfall(cfg.es_level)?;
    let model = gl.model()?;
    let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
    let sample = conditional_sample(&scn, &[x], &cfg.mc)?;
    let n = sample.len();
    let attr = Attribute::continuous(0);
    let spec = gl.cascade_spec()?;
    let opts = FairOptions::default();

    let g: Vec<f64> = sample.y.iter().zip(&sample.eps).map(|(y, e)| y - e).collect();
    let p_u_mc = block_estimate(n, &sample.batches, |idx| Ok(subset_mean(&g, idx)))?;
    let design = latin_hypercube(cfg.mc.seed.wrapping_add(UNCONDITIONAL_SEED_OFFSET), n, 1, cfg.mc.batches);
    let g_free: Vec<f64> = (0..n)
        .map(|j| model.eval(&[p.mu_d + p.sigma_d * normal_quantile(design.point(j)[0])], &[x]))
        .collect();
    let p_df_mc = block_estimate(n, &design.batches, |idx| Ok(subset_mean(&g_free, idx)))?;
    let mf_ev_mc = fair_rule_estimate(&model, &sample, &ev, &attr, None, &opts)?;
    let mf_es_mc = fair_rule_estimate(&model, &sample, &es, &attr, None, &opts)?;
    let cas_ev_mc = fair_rule_estimate(&model, &sample, &ev, &attr, Some(&spec), &opts)?;

    let sens = |rho: &WeightFunction, cascade: bool| -> Result<Estimate> {
        let dir = direction(&model, &sample, &attr, if cascade { Some(&spec) } else { None }, Convention::Exact)?;
        let eval = Evaluation::new(rho, &sample);
        eval.estimate(|idx| eval.sensitivity(&dir, idx))
    };
    let m_ev = sens(&ev, false)?;
    let c_ev = sens(&ev, true)?;
    let m_es = sens(&es, false)?;
    let c_es = sens(&es, true)?;

    let d0: Vec<f64> = (0..n).map(|j| sample.row(j)[0]).collect();
    let moments = |idx: &[usize]| {
        let m = subset_mean(&d0, idx);
        let m2 = compensated_sum(idx.iter().map(|&j| d0[j] * d0[j])) / idx.len() as f64;
        (m, m2)
    };
    let c_mc = block_estimate(n, &sample.batches, |idx| {
        let (m, m2) = moments(idx);
        Ok(1.0 - m * m / m2)
    })?;
    let es_dir = direction(&model, &sample, &attr, None, Convention::Exact)?;
    let es_eval = Evaluation::new(&es, &sample);
    let c_bar_mc = block_estimate(n, &sample.batches, |idx| {
        let (m, m2) = moments(idx);
        Ok(1.0 - es_eval.sensitivity(&es_dir, idx)? * m / (gl.beta_d * m2))
    })?;

    let base = gl.beta0 + gl.beta_x * x;
    let fair = |rho: &WeightFunction, v: Variant| gaussian_linear_fair_rule(gl, rho, x, v, DENOMINATOR_FLOOR);
    Ok(SimulationPoint {
        strategy: StrategyRow {
            x,
            p_u: base + gl.beta_d * p.cond_mean(x),
            p_df: base + gl.beta_d * p.mu_d,
            p_mf_ev: fair(&ev, Variant::Marginal)?.value,
            p_mf_es: fair(&es, Variant::Marginal)?.value,
            p_u_mc: p_u_mc.value,
            p_u_se: p_u_mc.se,
            p_df_mc: p_df_mc.value,
            p_df_se: p_df_mc.se,
            p_mf_ev_mc: mf_ev_mc.value,
            p_mf_ev_se: mf_ev_mc.se,
            p_mf_es_mc: mf_es_mc.value,
            p_mf_es_se: mf_es_mc.se,
        },
        adjustment: AdjustmentRow {
            x,
            one_minus_c: 1.0 - c_x(p, x),
            one_minus_c_bar: 1.0 - c_bar(gl, &es, x),
            one_minus_c_mc: c_mc.value,
            one_minus_c_se: c_mc.se,
            one_minus_c_bar_mc: c_bar_mc.value,
            one_minus_c_bar_se: c_bar_mc.se,
        },
        fair_rule: FairRuleRow {
            x,
            marginal: fair(&ev, Variant::Marginal)?.value,
            cascade: fair(&ev, Variant::Cascade)?.value,
            cascade_printed: cascade_fair_closed_form(gl, x)?,
            marginal_mc: mf_ev_mc.value,
            marginal_se: mf_ev_mc.se,
            cascade_mc: cas_ev_mc.value,
            cascade_se: cas_ev_mc.se,
        },
        sensitivity: SensitivityRow {
            x,
            marginal_ev: gl.sensitivity(&ev, x),
            cascade_ev: gl.cascade_sensitivity(&ev, x),
            marginal_es: gl.sensitivity(&es, x),
            cascade_es: gl.cascade_sensitivity(&es, x),
            marginal_ev_mc: m_ev.value,
            marginal_ev_se: m_ev.se,
            cascade_ev_mc: c_ev.value,
            cascade_ev_se: c_ev.se,
            marginal_es_mc: m_es.value,
            marginal_es_se: m_es.se,
            cascade_es_mc: c_es.value,
            cascade_es_se: c_es.se,
        },
    })
}

/// The simulation study over the configured grid, one point after another.
pub fn simulate(cfg: &SimulateConfig) -> Result<SimulationSeries> {
    let points = cfg.grid.points()?.into_iter().map(|x| simulate_point(cfg, x)).collect::<Result<Vec<_>>>()?;
    Ok(SimulationSeries::from_points(&points))
}

/// One policy with the columns of the French motor third-party liability
/// pricing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    #[serde(rename = "Gender")]
    pub gender: String,
    #[serde(rename = "Type")]
    pub car_type: String,
    #[serde(rename = "Category")]
    pub category: String,
    #[serde(rename = "Occupation")]
    pub occupation: String,
    #[serde(rename = "Age")]
    pub age: f64,
    #[serde(rename = "Group1")]
    pub group1: f64,
    #[serde(rename = "Poldur")]
    pub poldur: f64,
    #[serde(rename = "Value")]
    pub value: f64,
    #[serde(rename = "Adind")]
    pub adind: f64,
    #[serde(rename = "Group2")]
    pub group2: String,
    #[serde(rename = "Density")]
    pub density: f64,
    #[serde(rename = "Exppdays")]
    pub exppdays: f64,
    #[serde(rename = "Numtppd")]
    pub numtppd: f64,
    #[serde(rename = "Indtppd")]
    pub indtppd: f64,
}

impl PolicyRecord {
    /// Exposure in years.
    #[must_use]
    pub fn exposure(&self) -> f64 {
        self.exppdays / 365.0
    }

    /// Observed loss cost per exposure year.
    #[must_use]
    pub fn pure_premium(&self) -> f64 {
        self.indtppd / self.exposure()
    }
}

/// Levels of a categorical column with their log-scale effects; the first
/// level is the reference and must carry effect zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub levels: Vec<String>,
    pub effects: Vec<f64>,
    /// Level probabilities for the first and the second protected level.
    pub probabilities: [Vec<f64>; 2],
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| (*s).to_string()).collect()
}

impl Categorical {
    fn new(levels: &[&str], effects: &[f64], first: &[f64], second: &[f64]) -> Self {
        Self { levels: strings(levels), effects: effects.to_vec(), probabilities: [first.to_vec(), second.to_vec()] }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let k = self.levels.len();
        let ok = k >= 2
            && self.effects.len() == k
            && self.effects[0] == 0.0
            && self.probabilities.iter().all(|p| p.len() == k && p.iter().all(|v| *v >= 0.0) && p.iter().sum::<f64>() > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("categorical column {name} is malformed")))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, group: usize) -> usize {
        let p = &self.probabilities[group];
        let total: f64 = p.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (k, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return k;
            }
        }
        p.len() - 1
    }
}

/// Ground truth of the synthetic portfolio generator.
///
/// Claim counts are `Poisson(exposure · exp(η))` and claim sizes are gamma
/// with mean `severity_mean` and shape `severity_shape`, so the pure premium
/// is log-linear with intercept `frequency_intercept + ln severity_mean` and
/// the slopes below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub schema_version: u32,
    pub protected_levels: [String; 2],
    /// Probability of the second protected level.
    pub protected_share: f64,
    pub frequency_intercept: f64,
    pub severity_mean: f64,
    pub severity_shape: f64,
    /// Effect of the second protected level.
    pub protected_effect: f64,
    pub age: f64,
    pub poldur: f64,
    pub ln_value: f64,
    pub ln_density: f64,
    pub group1: f64,
    pub adind: f64,
    pub car_type: Categorical,
    pub category: Categorical,
    pub occupation: Categorical,
    pub group2: Categorical,
}

impl Default for GeneratorTruth {
    fn default() -> Self {
        Self {
            schema_version: 1,
            protected_levels: ["Male".to_string(), "Female".to_string()],
            protected_share: 0.45,
            frequency_intercept: -1.2,
            severity_mean: 1000.0,
            severity_shape: 5.0,
            protected_effect: -0.3,
            age: -0.015,
            poldur: -0.08,
            ln_value: 0.25,
            ln_density: 0.15,
            group1: 0.04,
            adind: 0.3,
            car_type: Categorical::new(
                &["A", "B", "C", "D", "E", "F"],
                &[0.0, 0.45, -0.45, 0.6, 0.75, -0.6],
                &[0.15, 0.2, 0.15, 0.2, 0.15, 0.15],
                &[0.2, 0.15, 0.2, 0.15, 0.15, 0.15],
            ),
            category: Categorical::new(&["Large", "Medium", "Small"], &[0.0, -0.45, -0.65], &[0.4, 0.35, 0.25], &[0.25, 0.35, 0.4]),
            occupation: Categorical::new(
                &["Employed", "Housewife", "Retired", "Self-employed", "Unemployed"],
                &[0.0, -0.45, -0.5, 0.45, 0.6],
                &[0.5, 0.03, 0.17, 0.2, 0.1],
                &[0.4, 0.25, 0.15, 0.1, 0.1],
            ),
            group2: Categorical::new(
                &["L", "M", "N", "O", "P", "Q", "R", "S", "T", "U"],
                &[0.0, 0.45, -0.45, 0.6, -0.6, 0.75, 0.5, -0.5, 0.65, -0.75],
                &[0.1; 10],
                &[0.1; 10],
            ),
        }
    }
}

impl GeneratorTruth {
    pub fn validate(&self) -> Result<()> {
        if !(self.protected_share > 0.0 && self.protected_share < 1.0) {
            return Err(Error::invalid("protected share must lie in (0, 1)"));
        }
        if !(self.severity_mean > 0.0 && self.severity_shape > 0.0) {
            return Err(Error::invalid("severity mean and shape must be positive"));
        }
        self.car_type.validate("Type")?;
        self.category.validate("Category")?;
        self.occupation.validate("Occupation")?;
        self.group2.validate("Group2")
    }

    /// The encoder matching this generator's levels.
    #[must_use]
    pub fn encoder(&self) -> Encoder {
        Encoder {
            protected: "Gender".to_string(),
            protected_levels: self.protected_levels.to_vec(),
            categorical: vec![
                ("Type".to_string(), self.car_type.levels.clone()),
                ("Category".to_string(), self.category.levels.clone()),
                ("Occupation".to_string(), self.occupation.levels.clone()),
                ("Group2".to_string(), self.group2.levels.clone()),
            ],
        }
    }

    /// True pure-premium intercept and coefficients in the column order of
    /// `layout`.
    pub fn coefficients(&self, layout: &FeatureLayout) -> Result<(f64, Vec<f64>)> {
        let cats = [
            ("Type", &self.car_type),
            ("Category", &self.category),
            ("Occupation", &self.occupation),
            ("Group2", &self.group2),
        ];
        let mut out = Vec::with_capacity(layout.dim());
        for (name, kind) in layout.names.iter().zip(&layout.kinds) {
            let v = match kind {
                FeatureKind::OneHot { variable, level } => {
                    let (_, c) = cats
                        .iter()
                        .find(|(n, _)| n == variable)
                        .ok_or_else(|| Error::InvalidInput(format!("no truth for {variable}")))?;
                    let k = c
                        .levels
                        .iter()
                        .position(|l| l == level)
                        .ok_or_else(|| Error::InvalidInput(format!("no truth for {variable}={level}")))?;
                    c.effects[k]
                }
                FeatureKind::Continuous => match name.as_str() {
                    "Gender" => self.protected_effect,
                    "Age" => self.age,
                    "Poldur" => self.poldur,
                    "ln_Value" => self.ln_value,
                    "ln_Density" => self.ln_density,
                    "Group1" => self.group1,
                    "Adind" => self.adind,
                    other => return Err(Error::InvalidInput(format!("no truth for {other}"))),
                },
            };
            out.push(v);
        }
        Ok((self.frequency_intercept + ln(self.severity_mean), out))
    }
}

fn distribution_error(e: impl core::fmt::Display) -> Error {
    Error::InvalidInput(format!("generator distribution: {e}"))
}

/// Draws `n` policies from the documented generator; a fixed seed gives the
/// same portfolio on every platform.
pub fn generate_portfolio(truth: &GeneratorTruth, n: usize, seed: u64) -> Result<Vec<PolicyRecord>> {
    if n == 0 {
        return Err(Error::invalid("portfolio size must be at least 1"));
    }
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = Beta::new(2.0, 3.0).map_err(distribution_error)?;
    let poldur = Poisson::new(4.0).map_err(distribution_error)?;
    let value = LogNormal::new(9.5, 0.5).map_err(distribution_error)?;
    let density = LogNormal::new(4.5, 1.2).map_err(distribution_error)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let female = usize::from(rng.random::<f64>() < truth.protected_share);
        let t = truth.car_type.draw(&mut rng, female);
        let c = truth.category.draw(&mut rng, female);
        let o = truth.occupation.draw(&mut rng, female);
        let g2 = truth.group2.draw(&mut rng, female);
        let a = libm::round(18.0 + 62.0 * age.sample(&mut rng));
        let pd: f64 = poldur.sample(&mut rng);
        let pd = pd.min(15.0);
        let v = libm::round(value.sample(&mut rng));
        let dens = libm::round(density.sample(&mut rng) * 100.0) / 100.0;
        let ad = f64::from(u8::from(rng.random::<f64>() < 0.5));
        let g1 = f64::from(rng.random_range(1..=20u8));
        let days = f64::from(rng.random_range(30..=365u16));
        let eta = truth.frequency_intercept
            + if female == 1 { truth.protected_effect } else { 0.0 }
            + truth.age * a
            + truth.poldur * pd
            + truth.ln_value * ln(v)
            + truth.ln_density * ln(dens)
            + truth.group1 * g1
            + truth.adind * ad
            + truth.car_type.effects[t]
            + truth.category.effects[c]
            + truth.occupation.effects[o]
            + truth.group2.effects[g2];
        let lambda = days / 365.0 * libm::exp(eta);
        let claims = if lambda > 0.0 { Poisson::new(lambda).map_err(distribution_error)?.sample(&mut rng) } else { 0.0 };
        let amount = if claims > 0.0 {
            let shape = claims * truth.severity_shape;
            let g = Gamma::new(shape, truth.severity_mean / truth.severity_shape).map_err(distribution_error)?;
            libm::round(g.sample(&mut rng) * 100.0) / 100.0
        } else {
            0.0
        };
        out.push(PolicyRecord {
            gender: truth.protected_levels[female].clone(),
            car_type: truth.car_type.levels[t].clone(),
            category: truth.category.levels[c].clone(),
            occupation: truth.occupation.levels[o].clone(),
            age: a,
            group1: g1,
            poldur: pd,
            value: v,
            adind: ad,
            group2: truth.group2.levels[g2].clone(),
            density: dens,
            exppdays: days,
            numtppd: claims,
            indtppd: amount,
        });
    }
    Ok(out)
}

/// Names of the continuous encoded columns after the protected one.
pub const CONTINUOUS_COLUMNS: [&str; 6] = ["Age", "Poldur", "ln_Value", "ln_Density", "Group1", "Adind"];

/// Encodes policies as `(D, Age, Poldur, ln Value, ln Density, Group1,
/// Adind, one-hot categorical levels without the reference)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub protected: String,
    /// `D = k` encodes the `k`-th level.
    pub protected_levels: Vec<String>,
    pub categorical: Vec<(String, Vec<String>)>,
}

impl Default for Encoder {
    fn default() -> Self {
        GeneratorTruth::default().encoder()
    }
}

impl Encoder {
    #[must_use]
    pub fn layout(&self) -> FeatureLayout {
        let mut names = vec![self.protected.clone()];
        let mut kinds = vec![FeatureKind::Continuous];
        for c in CONTINUOUS_COLUMNS {
            names.push(c.to_string());
            kinds.push(FeatureKind::Continuous);
        }
        for (var, levels) in &self.categorical {
            for l in &levels[1..] {
                names.push(format!("{var}={l}"));
                kinds.push(FeatureKind::OneHot { variable: var.clone(), level: l.clone() });
            }
        }
        FeatureLayout { names, kinds, protected: 1 }
    }

    /// Numeric level index of the protected attribute.
    pub fn protected_value(&self, r: &PolicyRecord) -> Result<f64> {
        self.protected_levels
            .iter()
            .position(|l| *l == r.gender)
            .map(|k| k as f64)
            .ok_or_else(|| Error::InvalidInput(format!("unknown {} level {:?}", self.protected, r.gender)))
    }

    fn categorical_value<'a>(&self, r: &'a PolicyRecord, var: &str) -> Result<&'a str> {
        Ok(match var {
            "Type" => &r.car_type,
            "Category" => &r.category,
            "Occupation" => &r.occupation,
            "Group2" => &r.group2,
            other => return Err(Error::InvalidInput(format!("unknown categorical column {other}"))),
        })
    }

    /// Encoded row `(d, x)` of one policy.
    pub fn encode_row(&self, r: &PolicyRecord) -> Result<Vec<f64>> {
        if !(r.value > 0.0 && r.density > 0.0 && r.exppdays > 0.0) {
            return Err(Error::invalid("Value, Density and Exppdays must be positive"));
        }
        if !(r.indtppd >= 0.0) {
            return Err(Error::invalid("Indtppd must be nonnegative"));
        }
        let mut row = vec![self.protected_value(r)?, r.age, r.poldur, ln(r.value), ln(r.density), r.group1, r.adind];
        for (var, levels) in &self.categorical {
            let v = self.categorical_value(r, var)?;
            let k = levels
                .iter()
                .position(|l| l == v)
                .ok_or_else(|| Error::InvalidInput(format!("unknown {var} level {v:?}")))?;
            row.extend((1..levels.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
        }
        Ok(row)
    }

    /// Pure-premium dataset with exposure weights.
    pub fn dataset(&self, records: &[PolicyRecord]) -> Result<EncodedDataset> {
        let mut rows = Vec::with_capacity(records.len() * self.layout().dim());
        for r in records {
            rows.extend(self.encode_row(r)?);
        }
        EncodedDataset::new(
            rows,
            self.layout(),
            records.iter().map(PolicyRecord::pure_premium).collect(),
            Some(records.iter().map(PolicyRecord::exposure).collect()),
        )
    }
}

/// Gini index and Lorenz curve of a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gini {
    pub index: f64,
    /// `(exposure share, loss share)` at the end of every block of tied
    /// predictions, starting at `(0, 0)`.
    pub lorenz: Vec<(f64, f64)>,
}

fn check_diagnostic_inputs(pred: &[f64], observed: &[f64], exposure: &[f64]) -> Result<()> {
    if pred.len() != observed.len() || pred.len() != exposure.len() || pred.is_empty() {
        return Err(Error::invalid("predictions, losses and exposures must have the same nonzero length"));
    }
    if exposure.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("exposure must be positive"));
    }
    crate::error::ensure_finite(pred, "predictions")?;
    crate::error::ensure_finite(observed, "losses")
}

fn ascending(pred: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    order
}

/// Twice the area between the diagonal and the Lorenz curve of losses
/// against exposure, rows sorted by ascending prediction. Rows with equal
/// predictions form one block, so the curve is linear across a tie.
pub fn gini(pred: &[f64], losses: &[f64], exposure: &[f64]) -> Result<Gini> {
    check_diagnostic_inputs(pred, losses, exposure)?;
    let total_loss = compensated_sum(losses.iter().copied());
    if !(total_loss != 0.0) {
        return Err(Error::invalid("total loss is zero; the Gini index is undefined"));
    }
    let total_exposure = compensated_sum(exposure.iter().copied());
    let order = ascending(pred);
    let mut lorenz = vec![(0.0, 0.0)];
    let (mut ce, mut cl) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let v = pred[order[k]];
        while k < order.len() && pred[order[k]] == v {
            ce += exposure[order[k]];
            cl += losses[order[k]];
            k += 1;
        }
        lorenz.push((ce / total_exposure, cl / total_loss));
    }
    if let Some(last) = lorenz.last_mut() {
        *last = (1.0, 1.0);
    }
    let area = compensated_sum(lorenz.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0));
    Ok(Gini { index: 1.0 - 2.0 * area, lorenz })
}

/// One equal-exposure bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBin {
    pub bin: usize,
    pub rows: usize,
    pub exposure: f64,
    /// Exposure-weighted mean prediction.
    pub predicted: f64,
    /// Losses per unit exposure.
    pub observed: f64,
}

/// Result of [`quantile_bins`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    pub bins: Vec<QuantileBin>,
    /// Set when there are fewer distinct predictions than bins.
    pub merged: bool,
}

/// Equal-exposure bins of the rows sorted by prediction: a row belongs to
/// bin `⌊n_bins · (cumulative exposure before it + half its own) / total⌋`.
pub fn quantile_bins(pred: &[f64], observed: &[f64], exposure: &[f64], n_bins: usize) -> Result<QuantileBins> {
    check_diagnostic_inputs(pred, observed, exposure)?;
    if n_bins < 2 {
        return Err(Error::invalid("at least two bins are needed"));
    }
    let order = ascending(pred);
    let distinct = 1 + order.windows(2).filter(|w| pred[w[0]] != pred[w[1]]).count();
    let total = compensated_sum(exposure.iter().copied());
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); n_bins];
    let mut before = 0.0;
    for &j in &order {
        let b = (((before + exposure[j] / 2.0) / total * n_bins as f64) as usize).min(n_bins - 1);
        before += exposure[j];
        let a = &mut acc[b];
        a.0 += 1;
        a.1 += exposure[j];
        a.2 += pred[j] * exposure[j];
        a.3 += observed[j];
    }
    let bins = acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(bin, (rows, e, p, o))| QuantileBin { bin, rows, exposure: e, predicted: p / e, observed: o / e })
        .collect();
    Ok(QuantileBins { bins, merged: distinct < n_bins })
}

/// `min, q25, median, q75, max, mean` of a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

/// Summary statistics with linearly interpolated quartiles.
pub fn summarize(name: &str, values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty column"));
    }
    crate::error::ensure_finite(values, name)?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = libm::floor(h) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Ok(Summary {
        name: name.to_string(),
        count: v.len(),
        min: v[0],
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        max: v[v.len() - 1],
        mean: compensated_sum(v.iter().copied()) / v.len() as f64,
    })
}

/// Settings of [`audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub split_seed: u64,
    pub train_fraction: f64,
    pub es_level: f64,
    /// Lower edges of the age groups; the last group is open-ended.
    pub age_bins: Vec<f64>,
    pub quantile_bins: usize,
    pub tweedie_power: f64,
    pub encoder: Encoder,
    pub fit: FitOptions,
    pub class_fit: ClassFitOptions,
    pub tail: TailOptions,
    pub convention: Convention,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            split_seed: 20_240_701,
            train_fraction: 0.7,
            es_level: 0.9,
            age_bins: vec![18.0, 25.0, 35.0, 45.0, 55.0, 65.0],
            quantile_bins: 10,
            tweedie_power: crate::predictors::DEFAULT_TWEEDIE_POWER,
            encoder: Encoder::default(),
            fit: FitOptions::default(),
            class_fit: ClassFitOptions::default(),
            tail: TailOptions::default(),
            convention: Convention::Exact,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0, 1)"));
        }
        if !(self.es_level > 0.0 && self.es_level < 1.0) {
            return Err(Error::invalid("ES level must lie in (0, 1)"));
        }
        if self.age_bins.is_empty() || self.age_bins.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("age bins must be strictly increasing"));
        }
        if self.quantile_bins < 2 {
            return Err(Error::invalid("at least two quantile bins are needed"));
        }
        if self.encoder.protected_levels.len() < 2 {
            return Err(Error::invalid("the protected attribute needs at least two levels"));
        }
        Ok(())
    }

    fn age_group(&self, age: f64) -> usize {
        self.age_bins.iter().rposition(|&b| age >= b).unwrap_or(0)
    }

    fn age_label(&self, k: usize) -> String {
        match self.age_bins.get(k + 1) {
            Some(hi) => format!("[{}, {})", self.age_bins[k], hi),
            None => format!("[{}, inf)", self.age_bins[k]),
        }
    }
}

/// Summaries of one age group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGroupSensitivity {
    pub group: String,
    pub ev: Summary,
    pub es: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniRow {
    pub strategy: Strategy,
    pub index: f64,
}

/// Decision strategies compared by the audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "P_U")]
    Unaware,
    #[serde(rename = "P_DF")]
    DiscriminationFree,
    #[serde(rename = "P_MF_EV")]
    FairEv,
    #[serde(rename = "P_MF_ES")]
    FairEs,
}

impl Strategy {
    #[must_use]
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Unaware => "P_U",
            Strategy::DiscriminationFree => "P_DF",
            Strategy::FairEv => "P_MF_EV",
            Strategy::FairEs => "P_MF_ES",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub strategy: Strategy,
    pub bin: usize,
    pub rows: usize,
    pub exposure: f64,
    pub predicted: f64,
    pub observed: f64,
}

/// Tables produced by [`audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub es_level: f64,
    /// Training share of each protected level.
    pub protected_masses: Vec<f64>,
    pub decision_summary: Vec<Summary>,
    pub adjustment_summary: Vec<Summary>,
    pub sensitivity_by_age: Vec<AgeGroupSensitivity>,
    pub gini: Vec<GiniRow>,
    pub quantile_bins: Vec<BinRow>,
    pub merged_bins: bool,
    pub degenerate_rows: usize,
    pub tail_fallback: bool,
}

/// Fitted models and decisions behind an [`AuditReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutput {
    pub report: AuditReport,
    /// Step-one pure-premium model `g(D, X)`.
    pub model: PredictionModel,
    /// `P(D = t_k | X)`.
    pub class_model: ClassProbabilityModel,
    /// `P(Y > VaR_α(Y | X) | D, X)`, fitted on `(D, X)`.
    pub exceedance_model: ClassProbabilityModel,
    pub tail: Option<ConditionalTail>,
    pub decisions: DecisionSet,
    /// Per test row: expected-value and ES sensitivities.
    pub sensitivities: Vec<(f64, f64)>,
    pub test_rows: Vec<usize>,
}

/// Expected-value and ES ingredients of the discrete fair rule at one
/// covariate vector, with `E[Y | D = t_k, X = x] = g(t_k, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTerms {
    pub unaware: f64,
    pub discrimination_free: f64,
    pub sensitivity_ev: f64,
    pub sensitivity_es: f64,
    pub denominator: f64,
    pub cross: f64,
}

/// Per-level representer `Z_k(x)` of the discrete perturbation: the exact
/// jump form, or `v_k Δ_k g` for the printed convention.
pub fn level_representer(
    g: &[f64],
    levels: &DiscreteLevels,
    convention: Convention,
) -> Result<Vec<f64>> {
    let k_max = levels.len();
    if g.len() != k_max {
        return Err(Error::invalid("one model value per level is needed"));
    }
    let v = v_weights(levels);
    Ok((0..k_max)
        .map(|k| match convention {
            Convention::Exact => {
                let mass = levels.mass(k);
                let down = if k > 0 { 0.5 * v[k - 1] / mass * (g[k - 1] - g[k]) } else { 0.0 };
                let up = if k + 1 < k_max { -0.5 * v[k] / mass * (g[k + 1] - g[k]) } else { 0.0 };
                down + up
            }
            Convention::Published => {
                if k + 1 < k_max {
                    v[k] * (g[k] - g[k + 1])
                } else {
                    0.0
                }
            }
        })
        .collect())
}

/// Fair-rule ingredients from the level values `g(t_k, x)`, conditional
/// class probabilities `π_k(x)` and exceedance probabilities
/// `P(Y > VaR_α | D = t_k, X = x)`.
///
/// The ES sensitivity uses the first-order form `E[Z γ(U) | X = x]` with
/// `γ(U) = 1{U > α}/(1 − α)`.
pub fn discrete_terms(
    g: &[f64],
    probs: &[f64],
    exceed: &[f64],
    levels: &DiscreteLevels,
    es_level: f64,
    convention: Convention,
) -> Result<DiscreteTerms> {
    let z = level_representer(g, levels, convention)?;
    let k = z.len();
    if probs.len() != k || exceed.len() != k {
        return Err(Error::invalid("one probability per level is needed"));
    }
    let dot = |f: &dyn Fn(usize) -> f64| compensated_sum((0..k).map(f));
    Ok(DiscreteTerms {
        unaware: dot(&|j| probs[j] * g[j]),
        discrimination_free: dot(&|j| levels.mass(j) * g[j]),
        sensitivity_ev: dot(&|j| probs[j] * z[j]),
        sensitivity_es: dot(&|j| probs[j] * z[j] * exceed[j]) / (1.0 - es_level),
        denominator: dot(&|j| probs[j] * z[j] * z[j]),
        cross: dot(&|j| probs[j] * g[j] * z[j]),
    })
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = libm::round(fraction * n as f64) as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn covariates(data: &EncodedDataset, rows: &[usize], m: usize) -> Vec<f64> {
    rows.iter().flat_map(|&i| data.row(i)[m..].iter().copied()).collect()
}

/// Two-step audit: fit `g(D, X)` on the training rows, fit the conditional
/// models, and compare the four strategies on the test rows.
pub fn audit(records: &[PolicyRecord], cfg: &AuditConfig) -> Result<AuditOutput> {
    cfg.validate()?;
    let data = cfg.encoder.dataset(records)?;
    let n = data.len();
    let (train, test) = split(n, cfg.train_fraction, cfg.split_seed);
    if train.len() < 10 || test.is_empty() {
        return Err(Error::invalid("too few rows for a train/test split"));
    }
    let train_data = data.select_rows(&train)?;
    let family = ModelFamily::Glm { link: Link::Log, loss: Loss::Tweedie { power: cfg.tweedie_power } };
    let model = fit_glm(&train_data, family, &cfg.fit)?;

    let k_levels = cfg.encoder.protected_levels.len();
    let level_values: Vec<f64> = (0..k_levels).map(|k| k as f64).collect();
    let d_train: Vec<f64> = train.iter().map(|&i| data.row(i)[0]).collect();
    let w_train: Vec<f64> = train.iter().map(|&i| data.weight(i)).collect();
    let w_total: f64 = w_train.iter().sum();
    let masses: Vec<f64> = level_values
        .iter()
        .map(|&t| d_train.iter().zip(&w_train).filter(|(d, _)| **d == t).map(|(_, w)| w).sum::<f64>() / w_total)
        .collect();
    let levels = DiscreteLevels::from_masses(level_values.clone(), &masses)?;

    let dim = data.dim() - 1;
    let x_train = covariates(&data, &train, 1);
    let class_model =
        ClassProbabilityModel::fit(&x_train, dim, &d_train, &level_values, Some(&w_train), Basis::Identity, &cfg.class_fit)?;

    let y_train: Vec<f64> = train.iter().map(|&i| data.response[i]).collect();
    let (tail, tail_fallback) = match fit_conditional_tail(&x_train, dim, &y_train, Some(&w_train), cfg.es_level, &cfg.tail) {
        Ok(t) => (Some(t), false),
        Err(Error::TooFewExceedances { .. }) => (None, true),
        Err(e) => return Err(e),
    };
    let unconditional_es = {
        let es = WeightFunction::expected_shortfall(cfg.es_level)?;
        let dist = crate::distortion::EmpiricalDistribution::weighted(&y_train, &w_train)?;
        crate::distortion::evaluate(&es, &dist)?
    };
    let mean_train = compensated_sum(y_train.iter().zip(&w_train).map(|(y, w)| y * w)) / w_total;
    let var_of = |x: &[f64]| -> f64 {
        match &tail {
            Some(t) => t.var_model.predict(x),
            None => f64::INFINITY,
        }
    };
    let exceed_target: Vec<f64> =
        train.iter().map(|&i| f64::from(u8::from(data.response[i] > var_of(&data.row(i)[1..])))).collect();
    let full_train: Vec<f64> = train.iter().flat_map(|&i| data.row(i).iter().copied()).collect();
    let exceedance_model = ClassProbabilityModel::fit(
        &full_train,
        dim + 1,
        &exceed_target,
        &[0.0, 1.0],
        Some(&w_train),
        Basis::Identity,
        &cfg.class_fit,
    )?;

    let mut rows = Vec::with_capacity(test.len());
    let mut sensitivities = Vec::with_capacity(test.len());
    let mut degenerate = 0;
    for (id, &i) in test.iter().enumerate() {
        let x = &data.row(i)[1..];
        let g: Vec<f64> = level_values.iter().map(|&t| model.eval(&[t], x)).collect();
        let probs = class_model.probabilities(x)?;
        let exceed: Vec<f64> = level_values
            .iter()
            .map(|&t| {
                let mut full = vec![t];
                full.extend_from_slice(x);
                exceedance_model.probabilities(&full).map(|p| p[1])
            })
            .collect::<Result<_>>()?;
        let terms = discrete_terms(&g, &probs, &exceed, &levels, cfg.es_level, cfg.convention)?;
        let es_risk = match &tail {
            Some(t) => crate::conditional::cond_es(t, x).max(t.var_model.predict(x)),
            None => terms.unaware * unconditional_es / mean_train,
        };
        let ev_adj = adjust(terms.unaware, terms.sensitivity_ev, terms.denominator, terms.cross, DENOMINATOR_FLOOR);
        let fair_es = match adjust(es_risk, terms.sensitivity_es, terms.denominator, terms.cross, DENOMINATOR_FLOOR) {
            Ok(a) => a.value,
            Err(Error::DegenerateDenominator { .. }) => es_risk,
            Err(e) => return Err(e),
        };
        let ev_adj = match ev_adj {
            Ok(a) => Some(a),
            Err(Error::DegenerateDenominator { .. }) => {
                degenerate += 1;
                None
            }
            Err(e) => return Err(e),
        };
        let mut row = Decision::new(id, x.to_vec(), terms.unaware, terms.discrimination_free, ev_adj.as_ref(), fair_es);
        if tail_fallback {
            row.flags.push(Flag::TailFallback);
        }
        rows.push(row);
        sensitivities.push((terms.sensitivity_ev, terms.sensitivity_es));
    }
    let decisions = DecisionSet { es_level: cfg.es_level, variant: Variant::Marginal, rows };
    decisions.validate()?;

    let col = |f: &dyn Fn(&Decision) -> f64| decisions.rows.iter().map(f).collect::<Vec<f64>>();
    let p_u = col(&|r| r.unaware);
    let p_df = col(&|r| r.discrimination_free);
    let p_ev = col(&|r| r.fair_ev);
    let p_es = col(&|r| r.fair_es);
    let decision_summary = vec![
        summarize("P_U", &p_u)?,
        summarize("P_DF", &p_df)?,
        summarize("P_MF_EV", &p_ev)?,
        summarize("P_MF_ES", &p_es)?,
    ];
    let es_gap: Vec<f64> = test
        .iter()
        .zip(&decisions.rows)
        .map(|(&i, r)| {
            let x = &data.row(i)[1..];
            let es_risk = match &tail {
                Some(t) => crate::conditional::cond_es(t, x).max(t.var_model.predict(x)),
                None => r.unaware * unconditional_es / mean_train,
            };
            es_risk - r.fair_es
        })
        .collect();
    let adjustment_summary = vec![summarize("P_U - P_MF_EV", &col(&|r| r.adjustment))?, summarize("ES - P_MF_ES", &es_gap)?];

    let n_groups = cfg.age_bins.len();
    let mut by_age: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_groups];
    for (&i, s) in test.iter().zip(&sensitivities) {
        let g = cfg.age_group(data.row(i)[1]);
        by_age[g].0.push(s.0);
        by_age[g].1.push(s.1);
    }
    let sensitivity_by_age = by_age
        .iter()
        .enumerate()
        .filter(|(_, (ev, _))| !ev.is_empty())
        .map(|(k, (ev, es))| {
            Ok(AgeGroupSensitivity { group: cfg.age_label(k), ev: summarize("EV", ev)?, es: summarize("ES", es)? })
        })
        .collect::<Result<Vec<_>>>()?;

    let losses: Vec<f64> = test.iter().map(|&i| records[i].indtppd).collect();
    let exposure: Vec<f64> = test.iter().map(|&i| data.weight(i)).collect();
    let observed: Vec<f64> = losses.iter().zip(&exposure).map(|(l, e)| l / e).collect();
    let mut gini_rows = Vec::new();
    let mut bin_rows = Vec::new();
    let mut merged = false;
    for (strategy, pred) in
        [(Strategy::Unaware, &p_u), (Strategy::DiscriminationFree, &p_df), (Strategy::FairEv, &p_ev)]
    {
        gini_rows.push(GiniRow { strategy, index: gini(pred, &losses, &exposure)?.index });
        let q = quantile_bins(pred, &observed.iter().zip(&exposure).map(|(o, e)| o * e).collect::<Vec<_>>(), &exposure, cfg.quantile_bins)?;
        merged |= q.merged;
        bin_rows.extend(q.bins.iter().map(|b| BinRow {
            strategy,
            bin: b.bin,
            rows: b.rows,
            exposure: b.exposure,
            predicted: b.predicted,
            observed: b.observed,
        }));
    }

    let report = AuditReport {
        schema_version: 1,
        n_train: train.len(),
        n_test: test.len(),
        es_level: cfg.es_level,
        protected_masses: masses,
        decision_summary,
        adjustment_summary,
        sensitivity_by_age,
        gini: gini_rows,
        quantile_bins: bin_rows,
        merged_bins: merged,
        degenerate_rows: degenerate,
        tail_fallback,
    };
    Ok(AuditOutput { report, model, class_model, exceedance_model, tail, decisions, sensitivities, test_rows: test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_61_points() {
        let g = Grid::default().points().unwrap();
        assert_eq!(g.len(), 61);
        assert_eq!(g[0], -3.0);
        assert_eq!(g[30], 0.0);
        assert_eq!(g[60], 3.0);
        assert!(Grid { start: 0.0, stop: 1.0, step: 0.3 }.points().is_err());
    }

    #[test]
    fn gini_examples() {
        let e = vec![1.0; 10];
        let l: Vec<f64> = (0..10).map(|i| if i == 9 { 10.0 } else { 0.0 }).collect();
        assert_eq!(gini(&[2.0; 10], &l, &e).unwrap().index, 0.0);
        let pred: Vec<f64> = (0..10).map(f64::from).collect();
        let g = gini(&pred, &l, &e).unwrap().index;
        assert!((g - 0.9).abs() < 1e-12);
        let rev: Vec<f64> = pred.iter().map(|p| -p).collect();
        assert!((gini(&rev, &l, &e).unwrap().index + g).abs() < 1e-12);
        assert!(gini(&pred, &[0.0; 10], &e).is_err());
    }

    #[test]
    fn bins_examples() {
        let pred: Vec<f64> = (0..100).map(f64::from).collect();
        let q = quantile_bins(&pred, &pred, &[1.0; 100], 10).unwrap();
        assert_eq!(q.bins.len(), 10);
        for b in &q.bins {
            assert!((b.exposure - 10.0).abs() <= 1.0);
            assert!((b.predicted - b.observed).abs() < 1e-12);
        }
        assert!(q.bins.windows(2).all(|w| w[0].predicted <= w[1].predicted));
        assert!(quantile_bins(&[1.0, 1.0, 2.0], &[1.0; 3], &[1.0; 3], 5).unwrap().merged);
    }

    #[test]
    fn summary_is_monotone() {
        let s = summarize("v", &[3.0, 1.0, 2.0, 10.0, -1.0]).unwrap();
        assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
        assert_eq!(s.median, 2.0);
    }

    #[test]
    fn generator_is_deterministic_and_rejects_empty() {
        let t = GeneratorTruth::default();
        assert!(generate_portfolio(&t, 0, 1).is_err());
        let a = generate_portfolio(&t, 200, 5).unwrap();
        let b = generate_portfolio(&t, 200, 5).unwrap();
        assert_eq!(a, b);
        let enc = t.encoder();
        let data = enc.dataset(&a).unwrap();
        let (_, beta) = t.coefficients(&data.layout).unwrap();
        assert_eq!(beta.len(), data.dim());
        assert_eq!(beta[0], t.protected_effect);
    }

    #[test]
    fn representer_matches_bernoulli_forms() {
        let p = 0.3;
        let levels = DiscreteLevels::bernoulli(p).unwrap();
        let g = [1.0, 3.0];
        let z = level_representer(&g, &levels, Convention::Exact).unwrap();
        let t = discrete_terms(&g, &[1.0 - p, p], &[0.0, 0.0], &levels, 0.9, Convention::Exact).unwrap();
        assert!((t.sensitivity_ev - crate::oracle::bernoulli_exact(2.0, p)).abs() < 1e-12, "{z:?}");
        let t = discrete_terms(&g, &[1.0 - p, p], &[0.0, 0.0], &levels, 0.9, Convention::Published).unwrap();
        assert!((t.sensitivity_ev - crate::oracle::bernoulli_published(2.0, p)).abs() < 1e-12);
    }
}
