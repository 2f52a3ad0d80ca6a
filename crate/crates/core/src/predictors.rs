//! Prediction functions `g(D, X)`: linear models and log/identity-link GLMs.
//!
//! Inputs are split into the protected vector `d` (first `m` encoded
//! columns) and the covariate vector `x`. Models expose exact partial
//! derivatives where the family allows it and central differences otherwise.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::cholesky_solve;
use crate::special::{exp, ln, powf, sqrt};

/// Version tag written into serialized models.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Largest linear predictor passed to `exp`, to keep log-link means finite.
const MAX_ETA: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    #[must_use]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => exp(eta.min(MAX_ETA)),
        }
    }

    #[must_use]
    pub fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => ln(mu),
        }
    }

    /// `dμ/dη` at `μ`.
    #[must_use]
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => mu,
        }
    }
}

/// Loss (exponential dispersion family) minimized by [`fit_glm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Loss {
    Gaussian,
    Poisson,
    Gamma,
    Tweedie { power: f64 },
}

/// Default Tweedie power for compound Poisson-gamma pure premiums.
pub const DEFAULT_TWEEDIE_POWER: f64 = 1.5;

impl Loss {
    fn validate(self) -> Result<()> {
        if let Loss::Tweedie { power } = self {
            if !(power > 1.0 && power < 2.0) {
                return Err(Error::InvalidInput(format!(
                    "invalid Tweedie power: must be in (1, 2), got {power}"
                )));
            }
        }
        Ok(())
    }

    /// Variance function `V(μ)`.
    #[must_use]
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Loss::Gaussian => 1.0,
            Loss::Poisson => mu,
            Loss::Gamma => mu * mu,
            Loss::Tweedie { power } => powf(mu, power),
        }
    }

    /// Unit deviance `d(y, μ)`. For the gamma loss a zero response uses the
    /// quasi-deviance with the `μ`-free term dropped.
    #[must_use]
    pub fn unit_deviance(self, y: f64, mu: f64) -> f64 {
        match self {
            Loss::Gaussian => (y - mu) * (y - mu),
            Loss::Poisson => {
                let t = if y > 0.0 { y * ln(y / mu) } else { 0.0 };
                2.0 * (t - (y - mu))
            }
            Loss::Gamma => {
                if y > 0.0 {
                    2.0 * (-ln(y / mu) + (y - mu) / mu)
                } else {
                    2.0 * (ln(mu) - 1.0)
                }
            }
            Loss::Tweedie { power: p } => {
                let a = if y > 0.0 {
                    powf(y, 2.0 - p) / ((1.0 - p) * (2.0 - p))
                } else {
                    0.0
                };
                2.0 * (a - y * powf(mu, 1.0 - p) / (1.0 - p) + powf(mu, 2.0 - p) / (2.0 - p))
            }
        }
    }

    fn requires_nonnegative(self) -> bool {
        !matches!(self, Loss::Gaussian)
    }
}

/// Role of an encoded column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Indicator column of `level` for a one-hot encoded `variable`.
    OneHot { variable: String, level: String },
}

/// Names and kinds of the encoded columns; the first `protected` columns are `D`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub protected: usize,
}

impl FeatureLayout {
    pub fn new(names: Vec<String>, kinds: Vec<FeatureKind>, protected: usize) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::invalid("feature names and kinds differ in length"));
        }
        if protected > names.len() {
            return Err(Error::invalid("more protected columns than features"));
        }
        Ok(Self {
            names,
            kinds,
            protected,
        })
    }

    /// All-continuous layout with the given protected and covariate names.
    #[must_use]
    pub fn continuous(protected: &[&str], covariates: &[&str]) -> Self {
        let names: Vec<String> = protected
            .iter()
            .chain(covariates)
            .map(|s| (*s).to_string())
            .collect();
        let kinds = vec![FeatureKind::Continuous; names.len()];
        Self {
            names,
            kinds,
            protected: protected.len(),
        }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    #[must_use]
    pub fn covariates(&self) -> usize {
        self.names.len() - self.protected
    }
}

/// Index of an input of `g`: a protected component or a covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Protected(usize),
    Covariate(usize),
}

impl Feature {
    #[must_use]
    pub fn flat(self, protected: usize) -> usize {
        match self {
            Feature::Protected(i) => i,
            Feature::Covariate(l) => protected + l,
        }
    }
}

/// How a derivative was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    Analytic,
    CentralDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    pub value: f64,
    pub method: DerivativeMethod,
}

/// A prediction function `g(d, x)` on the response scale.
pub trait Predictor: Sync {
    fn protected_dim(&self) -> usize;
    fn covariate_dim(&self) -> usize;

    /// `g(d, x)`; inputs are assumed to have the right dimensions.
    fn eval(&self, d: &[f64], x: &[f64]) -> f64;

    /// Whether a feature may be differentiated (one-hot columns may not).
    fn is_continuous(&self, _feature: Feature) -> bool {
        true
    }

    /// `∂g/∂feature`; the default is a central difference with step
    /// `max(1e-6, 1e-6·|v|)`.
    fn partial(&self, feature: Feature, d: &[f64], x: &[f64]) -> Result<Derivative> {
        if !self.is_continuous(feature) {
            return Err(Error::invalid("cannot differentiate a one-hot column; use delta_g"));
        }
        let (mut dp, mut xp) = (d.to_vec(), x.to_vec());
        let slot = match feature {
            Feature::Protected(i) => &mut dp[i],
            Feature::Covariate(l) => &mut xp[l],
        };
        let v = *slot;
        let h = 1e-6_f64.max(1e-6 * v.abs());
        *slot = v + h;
        let up = self.eval(&dp, &xp);
        let slot = match feature {
            Feature::Protected(i) => &mut dp[i],
            Feature::Covariate(l) => &mut xp[l],
        };
        *slot = v - h;
        let down = self.eval(&dp, &xp);
        Ok(Derivative {
            value: (up - down) / (2.0 * h),
            method: DerivativeMethod::CentralDifference,
        })
    }
}

/// Closure-backed predictor; derivatives fall back to central differences.
pub struct FnPredictor {
    protected: usize,
    covariates: usize,
    #[allow(clippy::type_complexity)]
    f: Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
}

impl FnPredictor {
    pub fn new(
        protected: usize,
        covariates: usize,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            protected,
            covariates,
            f: Box::new(f),
        }
    }
}

impl Predictor for FnPredictor {
    fn protected_dim(&self) -> usize {
        self.protected
    }
    fn covariate_dim(&self) -> usize {
        self.covariates
    }
    fn eval(&self, d: &[f64], x: &[f64]) -> f64 {
        (self.f)(d, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelFamily {
    Linear,
    Glm { link: Link, loss: Loss },
}

impl ModelFamily {
    #[must_use]
    pub fn link(self) -> Link {
        match self {
            ModelFamily::Linear => Link::Identity,
            ModelFamily::Glm { link, .. } => link,
        }
    }

    #[must_use]
    pub fn loss(self) -> Loss {
        match self {
            ModelFamily::Linear => Loss::Gaussian,
            ModelFamily::Glm { loss, .. } => loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub optimizer: String,
    pub iterations: usize,
    pub deviance: f64,
    pub gradient_norm: f64,
}

/// Fitted or hand-specified `g(D, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    pub schema_version: u32,
    pub family: ModelFamily,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub layout: FeatureLayout,
    pub diagnostics: Option<FitDiagnostics>,
}

impl PredictionModel {
    /// `g(d, x) = β₀ + β·(d, x)`.
    pub fn linear(intercept: f64, coefficients: Vec<f64>, layout: FeatureLayout) -> Result<Self> {
        Self::build(ModelFamily::Linear, intercept, coefficients, layout)
    }

    pub fn glm(
        link: Link,
        loss: Loss,
        intercept: f64,
        coefficients: Vec<f64>,
        layout: FeatureLayout,
    ) -> Result<Self> {
        Self::build(ModelFamily::Glm { link, loss }, intercept, coefficients, layout)
    }

    fn build(family: ModelFamily, intercept: f64, coefficients: Vec<f64>, layout: FeatureLayout) -> Result<Self> {
        family.loss().validate()?;
        if coefficients.len() != layout.dim() {
            return Err(Error::InvalidInput(format!(
                "coefficient vector has length {} but the encoding has {} columns",
                coefficients.len(),
                layout.dim()
            )));
        }
        ensure_finite(&coefficients, "coefficients")?;
        Ok(Self {
            schema_version: MODEL_SCHEMA_VERSION,
            family,
            intercept,
            coefficients,
            layout,
            diagnostics: None,
        })
    }

    /// Linear predictor `η = β₀ + β·(d, x)`.
    #[must_use]
    pub fn linear_predictor(&self, d: &[f64], x: &[f64]) -> f64 {
        let m = self.layout.protected;
        let mut eta = self.intercept;
        for (b, v) in self.coefficients[..m].iter().zip(d) {
            eta += b * v;
        }
        for (b, v) in self.coefficients[m..].iter().zip(x) {
            eta += b * v;
        }
        eta
    }

    /// Prediction for a full encoded row `(d, x)`.
    #[must_use]
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        let eta = self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        self.family.link().inverse(eta)
    }

    /// Coefficient of a feature.
    #[must_use]
    pub fn coefficient(&self, feature: Feature) -> f64 {
        self.coefficients[feature.flat(self.layout.protected)]
    }
}

impl Predictor for PredictionModel {
    fn protected_dim(&self) -> usize {
        self.layout.protected
    }
    fn covariate_dim(&self) -> usize {
        self.layout.covariates()
    }
    fn eval(&self, d: &[f64], x: &[f64]) -> f64 {
        self.family.link().inverse(self.linear_predictor(d, x))
    }
    fn is_continuous(&self, feature: Feature) -> bool {
        matches!(
            self.layout.kinds[feature.flat(self.layout.protected)],
            FeatureKind::Continuous
        )
    }
    fn partial(&self, feature: Feature, d: &[f64], x: &[f64]) -> Result<Derivative> {
        if !self.is_continuous(feature) {
            return Err(Error::invalid("cannot differentiate a one-hot column; use delta_g"));
        }
        let beta = self.coefficient(feature);
        let value = match self.family.link() {
            Link::Identity => beta,
            Link::Log => beta * self.eval(d, x),
        };
        Ok(Derivative {
            value,
            method: DerivativeMethod::Analytic,
        })
    }
}

fn check_dims(model: &dyn Predictor, d: &[f64], x: &[f64]) -> Result<()> {
    if d.len() != model.protected_dim() || x.len() != model.covariate_dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: model expects {} protected and {} covariates, got {} and {}",
            model.protected_dim(),
            model.covariate_dim(),
            d.len(),
            x.len()
        )));
    }
    ensure_finite(d, "protected vector")?;
    ensure_finite(x, "covariate vector")
}

/// `g(d, x)` on the response scale.
pub fn predict(model: &dyn Predictor, d: &[f64], x: &[f64]) -> Result<f64> {
    check_dims(model, d, x)?;
    Ok(model.eval(d, x))
}

/// `∂_i g(d, x)` with the method used.
pub fn partial_g(model: &dyn Predictor, feature: Feature, d: &[f64], x: &[f64]) -> Result<Derivative> {
    check_dims(model, d, x)?;
    let in_range = match feature {
        Feature::Protected(i) => i < d.len(),
        Feature::Covariate(l) => l < x.len(),
    };
    if !in_range {
        return Err(Error::invalid("feature index out of range"));
    }
    model.partial(feature, d, x)
}

/// `Δ g = g(d with d_i = t_a) − g(d with d_i = t_b)`.
///
/// When `levels` is given, both `t_a` and `t_b` must be among them.
pub fn delta_g(
    model: &dyn Predictor,
    i: usize,
    (t_a, t_b): (f64, f64),
    d: &[f64],
    x: &[f64],
    levels: Option<&[f64]>,
) -> Result<f64> {
    check_dims(model, d, x)?;
    if i >= d.len() {
        return Err(Error::invalid("protected index out of range"));
    }
    if let Some(levels) = levels {
        for t in [t_a, t_b] {
            if !levels.contains(&t) {
                return Err(Error::InvalidInput(format!("unknown level {t}")));
            }
        }
    }
    Ok(delta_unchecked(model, i, t_a, t_b, d, x))
}

pub(crate) fn delta_unchecked(model: &dyn Predictor, i: usize, t_a: f64, t_b: f64, d: &[f64], x: &[f64]) -> f64 {
    if t_a == t_b {
        return 0.0;
    }
    let mut dd = d.to_vec();
    dd[i] = t_a;
    let a = model.eval(&dd, x);
    dd[i] = t_b;
    a - model.eval(&dd, x)
}

/// Encoded design matrix with response and optional exposure weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    rows: Vec<f64>,
    n: usize,
    pub layout: FeatureLayout,
    pub response: Vec<f64>,
    pub exposure: Option<Vec<f64>>,
}

impl EncodedDataset {
    /// `rows` is row-major `n × layout.dim()`.
    pub fn new(rows: Vec<f64>, layout: FeatureLayout, response: Vec<f64>, exposure: Option<Vec<f64>>) -> Result<Self> {
        let p = layout.dim();
        let n = response.len();
        if rows.len() != n * p {
            return Err(Error::invalid("design matrix size does not match rows × features"));
        }
        ensure_finite(&rows, "design matrix")?;
        ensure_finite(&response, "response")?;
        if let Some(e) = &exposure {
            if e.len() != n {
                return Err(Error::invalid("exposure length differs from response length"));
            }
            if e.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid("exposure must be positive"));
            }
        }
        Ok(Self {
            rows,
            n,
            layout,
            response,
            exposure,
        })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.n
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    #[must_use]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.rows[i * p..(i + 1) * p]
    }

    #[must_use]
    pub fn weight(&self, i: usize) -> f64 {
        self.exposure.as_ref().map_or(1.0, |e| e[i])
    }

    /// Same rows with a different response.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        Self::new(self.rows.clone(), self.layout.clone(), response, self.exposure.clone())
    }

    /// Keeps the listed columns (in order) and the given number of protected ones.
    pub fn select_columns(&self, columns: &[usize], protected: usize) -> Result<Self> {
        let p = self.dim();
        let mut rows = Vec::with_capacity(self.n * columns.len());
        for i in 0..self.n {
            let r = &self.rows[i * p..(i + 1) * p];
            rows.extend(columns.iter().map(|&c| r[c]));
        }
        let layout = FeatureLayout::new(
            columns.iter().map(|&c| self.layout.names[c].clone()).collect(),
            columns.iter().map(|&c| self.layout.kinds[c].clone()).collect(),
            protected,
        )?;
        Self::new(rows, layout, self.response.clone(), self.exposure.clone())
    }

    /// Subset of rows.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let p = self.dim();
        let mut rows = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            rows.extend_from_slice(self.row(i));
        }
        Self::new(
            rows,
            self.layout.clone(),
            idx.iter().map(|&i| self.response[i]).collect(),
            self.exposure.as_ref().map(|e| idx.iter().map(|&i| e[i]).collect()),
        )
    }
}

/// Optimizer selection for [`fit_glm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    /// Iteratively reweighted least squares (Fisher scoring) with step halving.
    Irls,
    /// Full-batch Adam on standardized columns.
    Adam { learning_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub optimizer: Optimizer,
    pub max_iter: usize,
    /// Tolerance on the gradient norm of the weight-normalized half deviance.
    pub tol: f64,
    /// Optional ridge penalty added to the normal equations.
    pub ridge: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Irls,
            max_iter: 100,
            tol: 1e-8,
            ridge: None,
        }
    }
}

impl FitOptions {
    /// First-order settings: Adam with learning rate 0.01.
    #[must_use]
    pub fn adam() -> Self {
        Self {
            optimizer: Optimizer::Adam { learning_rate: 0.01 },
            max_iter: 20_000,
            tol: 1e-6,
            ridge: None,
        }
    }
}

/// Mean deviance, gradient of the half mean deviance in `(β₀, β)`, and means.
pub(crate) struct Objective {
    pub deviance: f64,
    pub gradient: Vec<f64>,
}

pub(crate) fn objective(data: &EncodedDataset, family: ModelFamily, beta: &[f64], with_gradient: bool) -> Objective {
    let p = data.dim();
    let link = family.link();
    let loss = family.loss();
    let mut dev = 0.0;
    let mut wsum = 0.0;
    let mut grad = vec![0.0; p + 1];
    for i in 0..data.len() {
        let row = data.row(i);
        let eta = beta[0] + beta[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
        let mu = link.inverse(eta);
        let y = data.response[i];
        let w = data.weight(i);
        wsum += w;
        dev += w * loss.unit_deviance(y, mu);
        if with_gradient {
            let g = -w * (y - mu) / loss.variance(mu) * link.mu_eta(mu);
            grad[0] += g;
            for (gj, v) in grad[1..].iter_mut().zip(row) {
                *gj += g * v;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= wsum);
    Objective {
        deviance: dev / wsum,
        gradient: grad,
    }
}

fn norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|x| x * x).sum())
}

fn validate_fit_input(data: &EncodedDataset, family: ModelFamily) -> Result<()> {
    family.loss().validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot fit on an empty dataset"));
    }
    if family.loss().requires_nonnegative() && data.response.iter().any(|y| *y < 0.0) {
        return Err(Error::invalid("response must be nonnegative for this loss"));
    }
    if matches!(family.loss(), Loss::Poisson | Loss::Gamma | Loss::Tweedie { .. })
        && family.link() == Link::Identity
    {
        return Err(Error::invalid("identity link is only supported with the gaussian loss"));
    }
    Ok(())
}

/// Fits `g` by minimizing the weighted deviance of `family`.
///
/// Exposure, when present, is used as prior weights. The linear family is
/// the gaussian loss with identity link.
pub fn fit_glm(data: &EncodedDataset, family: ModelFamily, options: &FitOptions) -> Result<PredictionModel> {
    validate_fit_input(data, family)?;
    let (beta, diag) = match options.optimizer {
        Optimizer::Irls => irls(data, family, options)?,
        Optimizer::Adam { learning_rate } => adam(data, family, options, learning_rate)?,
    };
    let mut model = PredictionModel::build(family, beta[0], beta[1..].to_vec(), data.layout.clone())?;
    model.diagnostics = Some(diag);
    Ok(model)
}

fn initial_beta(data: &EncodedDataset, family: ModelFamily) -> Vec<f64> {
    let wsum: f64 = (0..data.len()).map(|i| data.weight(i)).sum();
    let ybar = (0..data.len())
        .map(|i| data.weight(i) * data.response[i])
        .sum::<f64>()
        / wsum;
    let mut beta = vec![0.0; data.dim() + 1];
    beta[0] = match family.link() {
        Link::Identity => ybar,
        Link::Log => ln(ybar.max(1e-10)),
    };
    beta
}

fn irls(data: &EncodedDataset, family: ModelFamily, options: &FitOptions) -> Result<(Vec<f64>, FitDiagnostics)> {
    let p = data.dim() + 1;
    let link = family.link();
    let loss = family.loss();
    let mut beta = initial_beta(data, family);
    let mut current = objective(data, family, &beta, true);
    let mut xtwx = vec![0.0; p * p];
    let mut xtwz = vec![0.0; p];
    let mut xrow = vec![0.0; p];
    for iter in 1..=options.max_iter {
        xtwx.iter_mut().for_each(|v| *v = 0.0);
        xtwz.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..data.len() {
            xrow[0] = 1.0;
            xrow[1..].copy_from_slice(data.row(i));
            let eta: f64 = beta.iter().zip(&xrow).map(|(b, v)| b * v).sum();
            let mu = link.inverse(eta);
            let me = link.mu_eta(mu);
            let var = loss.variance(mu);
            if !(var > 0.0) || !(me != 0.0) {
                continue;
            }
            let w = data.weight(i) * me * me / var;
            let z = eta + (data.response[i] - mu) / me;
            for a in 0..p {
                let wa = w * xrow[a];
                xtwz[a] += wa * z;
                for b in 0..=a {
                    xtwx[a * p + b] += wa * xrow[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[b * p + a] = xtwx[a * p + b];
            }
        }
        if let Some(r) = options.ridge {
            let scale = (0..p).map(|a| xtwx[a * p + a]).fold(0.0_f64, f64::max).max(1.0);
            for a in 0..p {
                xtwx[a * p + a] += r * scale;
            }
        }
        let proposal = cholesky_solve(&xtwx, &xtwz)?;
        let mut step = 1.0;
        let mut next = proposal.clone();
        let mut trial = objective(data, family, &next, true);
        let mut halvings = 0;
        while !(trial.deviance <= current.deviance * (1.0 + 1e-12) + 1e-300) && halvings < 40 {
            step *= 0.5;
            halvings += 1;
            next = beta
                .iter()
                .zip(&proposal)
                .map(|(b, q)| b + step * (q - b))
                .collect();
            trial = objective(data, family, &next, true);
        }
        let change = (current.deviance - trial.deviance).abs();
        beta = next;
        current = trial;
        let gnorm = norm(&current.gradient);
        if gnorm <= options.tol || change <= 1e-15 * (current.deviance.abs() + 1e-300) {
            return Ok((
                beta,
                FitDiagnostics {
                    optimizer: "irls".to_string(),
                    iterations: iter,
                    deviance: current.deviance,
                    gradient_norm: gnorm,
                },
            ));
        }
    }
    Err(Error::Convergence {
        iterations: options.max_iter,
        gradient_norm: norm(&current.gradient),
    })
}

/// Column means and scales used to standardize non-intercept columns.
pub(crate) fn column_scaling(data: &EncodedDataset) -> (Vec<f64>, Vec<f64>) {
    let p = data.dim();
    let n = data.len() as f64;
    let mut mean = vec![0.0; p];
    for i in 0..data.len() {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; p];
    for i in 0..data.len() {
        for ((s, v), m) in sd.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd.into_iter().map(|s| if s > 0.0 { sqrt(s) } else { 1.0 }).collect();
    (mean, sd)
}

pub(crate) fn standardized(data: &EncodedDataset, mean: &[f64], sd: &[f64]) -> Result<EncodedDataset> {
    let p = data.dim();
    let mut rows = Vec::with_capacity(data.len() * p);
    for i in 0..data.len() {
        rows.extend(data.row(i).iter().zip(mean).zip(sd).map(|((v, m), s)| (v - m) / s));
    }
    EncodedDataset::new(rows, data.layout.clone(), data.response.clone(), data.exposure.clone())
}

/// Maps coefficients fitted on standardized columns back to the raw scale.
pub(crate) fn unstandardize(beta: &[f64], mean: &[f64], sd: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; beta.len()];
    out[0] = beta[0];
    for j in 1..beta.len() {
        out[j] = beta[j] / sd[j - 1];
        out[0] -= out[j] * mean[j - 1];
    }
    out
}

fn adam(
    data: &EncodedDataset,
    family: ModelFamily,
    options: &FitOptions,
    learning_rate: f64,
) -> Result<(Vec<f64>, FitDiagnostics)> {
    let (mean, sd) = column_scaling(data);
    let z = standardized(data, &mean, &sd)?;
    let mut beta = initial_beta(&z, family);
    let p = beta.len();
    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8_f64);
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut last_norm = f64::INFINITY;
    for t in 1..=options.max_iter {
        let obj = objective(&z, family, &beta, true);
        last_norm = norm(&obj.gradient);
        if last_norm <= options.tol {
            let raw = unstandardize(&beta, &mean, &sd);
            return Ok((
                raw,
                FitDiagnostics {
                    optimizer: "adam".to_string(),
                    iterations: t,
                    deviance: obj.deviance,
                    gradient_norm: last_norm,
                },
            ));
        }
        let c1 = 1.0 - powf(b1, t as f64);
        let c2 = 1.0 - powf(b2, t as f64);
        for j in 0..p {
            let g = obj.gradient[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            beta[j] -= learning_rate * (m[j] / c1) / (sqrt(v[j] / c2) + eps);
        }
    }
    Err(Error::Convergence {
        iterations: options.max_iter,
        gradient_norm: last_norm,
    })
}

/// Mean deviance of a model on a dataset (exposure-weighted).
#[must_use]
pub fn mean_deviance(model: &PredictionModel, data: &EncodedDataset) -> f64 {
    let mut beta = vec![model.intercept];
    beta.extend_from_slice(&model.coefficients);
    objective(data, model.family, &beta, false).deviance
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{open_uniform, stream_rng};
    use proptest::prelude::*;

    fn layout(p: usize) -> FeatureLayout {
        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        FeatureLayout::new(names, vec![FeatureKind::Continuous; p], 1).unwrap()
    }

    fn paper_linear() -> PredictionModel {
        PredictionModel::linear(1.0, vec![1.0, 2.0], FeatureLayout::continuous(&["D"], &["X"])).unwrap()
    }

    #[test]
    fn predict_examples() {
        let g = paper_linear();
        assert_eq!(predict(&g, &[3.0], &[0.5]).unwrap(), 5.0);
        assert_eq!(predict(&g, &[0.0], &[1.0]).unwrap(), 3.0);
        assert!(predict(&g, &[0.0, 1.0], &[1.0]).is_err());
        let zero = PredictionModel::glm(Link::Log, Loss::Gamma, 0.0, vec![0.0, 0.0], layout(2)).unwrap();
        assert_eq!(predict(&zero, &[4.0], &[-2.0]).unwrap(), 1.0);
    }

    #[test]
    fn partial_examples() {
        let g = paper_linear();
        let p = partial_g(&g, Feature::Protected(0), &[7.0], &[-1.0]).unwrap();
        assert_eq!(p.value, 1.0);
        assert_eq!(p.method, DerivativeMethod::Analytic);
        // log link, β_D = -0.2, intercept chosen so that g = 50
        let glm = PredictionModel::glm(
            Link::Log,
            Loss::Tweedie { power: 1.5 },
            ln(50.0),
            vec![-0.2, 0.3],
            layout(2),
        )
        .unwrap();
        let p = partial_g(&glm, Feature::Protected(0), &[0.0], &[0.0]).unwrap();
        assert!((p.value + 10.0).abs() < 1e-12);
        let sq = FnPredictor::new(1, 0, |d, _| d[0] * d[0]);
        let p = partial_g(&sq, Feature::Protected(0), &[3.0], &[]).unwrap();
        assert!((p.value - 6.0).abs() < 1e-5);
        assert_eq!(p.method, DerivativeMethod::CentralDifference);
    }

    #[test]
    fn one_hot_columns_cannot_be_differentiated() {
        let lay = FeatureLayout::new(
            vec!["Gender".into(), "TypeB".into()],
            vec![
                FeatureKind::OneHot { variable: "Gender".into(), level: "Female".into() },
                FeatureKind::OneHot { variable: "Type".into(), level: "B".into() },
            ],
            1,
        )
        .unwrap();
        let g = PredictionModel::glm(Link::Log, Loss::Poisson, 0.0, vec![0.1, 0.2], lay).unwrap();
        assert!(partial_g(&g, Feature::Protected(0), &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn delta_examples() {
        let g = paper_linear();
        assert_eq!(delta_g(&g, 0, (0.0, 1.0), &[0.0], &[0.3], None).unwrap(), -1.0);
        assert_eq!(delta_g(&g, 0, (1.0, 1.0), &[0.0], &[0.3], None).unwrap(), 0.0);
        assert!(delta_g(&g, 0, (0.0, 2.0), &[0.0], &[0.3], Some(&[0.0, 1.0])).is_err());
        // g(female = 1) = 40, g(male = 0) = 50
        let glm = PredictionModel::glm(Link::Log, Loss::Poisson, ln(50.0), vec![ln(0.8), 0.0], layout(2)).unwrap();
        let dg = delta_g(&glm, 0, (0.0, 1.0), &[1.0], &[0.0], Some(&[0.0, 1.0])).unwrap();
        assert!((dg - 10.0).abs() < 1e-10);
        let dg = delta_g(&glm, 0, (1.0, 0.0), &[1.0], &[0.0], Some(&[0.0, 1.0])).unwrap();
        assert!((dg + 10.0).abs() < 1e-10);
    }

    #[test]
    fn tweedie_power_is_validated() {
        assert!(PredictionModel::glm(Link::Log, Loss::Tweedie { power: 2.0 }, 0.0, vec![0.0], layout(1)).is_err());
        assert!(PredictionModel::linear(0.0, vec![1.0], layout(2)).is_err());
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut rng = stream_rng(1, 0);
        for _ in 0..200 {
            let d = 4.0 * open_uniform(&mut rng);
            let x = 2.0 * open_uniform(&mut rng) - 1.0;
            rows.extend([d, x]);
            y.push(1.0 + 2.0 * x + d);
        }
        let data = EncodedDataset::new(rows, FeatureLayout::continuous(&["D"], &["X"]), y, None).unwrap();
        let m = fit_glm(&data, ModelFamily::Linear, &FitOptions::default()).unwrap();
        assert!((m.intercept - 1.0).abs() < 1e-6);
        assert!((m.coefficients[0] - 1.0).abs() < 1e-6);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn intercept_only_poisson_is_log_mean() {
        let lay = FeatureLayout::new(vec![], vec![], 0).unwrap();
        let data = EncodedDataset::new(vec![], lay, vec![3.5; 50], None).unwrap();
        let fam = ModelFamily::Glm { link: Link::Log, loss: Loss::Poisson };
        let m = fit_glm(&data, fam, &FitOptions::default()).unwrap();
        assert!((m.intercept - ln(3.5)).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_surfaces_unless_ridge() {
        let rows: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let data = EncodedDataset::new(rows, layout(2), y, None).unwrap();
        assert_eq!(fit_glm(&data, ModelFamily::Linear, &FitOptions::default()), Err(Error::SingularDesign));
        let opts = FitOptions { ridge: Some(1e-8), ..FitOptions::default() };
        assert!(fit_glm(&data, ModelFamily::Linear, &opts).is_ok());
    }

    #[test]
    fn adam_reaches_irls_deviance() {
        let mut rng = stream_rng(5, 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..500 {
            let d = if open_uniform(&mut rng) < 0.4 { 1.0 } else { 0.0 };
            let x = open_uniform(&mut rng);
            rows.extend([d, x]);
            let mu = exp(0.5 - 0.3 * d + 0.8 * x);
            y.push(if open_uniform(&mut rng) < 0.3 { mu / 0.3 * open_uniform(&mut rng) * 2.0 } else { 0.0 });
        }
        let data = EncodedDataset::new(rows, layout(2), y, None).unwrap();
        let fam = ModelFamily::Glm { link: Link::Log, loss: Loss::Tweedie { power: 1.5 } };
        let a = fit_glm(&data, fam, &FitOptions::default()).unwrap();
        let b = fit_glm(&data, fam, &FitOptions::adam()).unwrap();
        let (da, db) = (mean_deviance(&a, &data), mean_deviance(&b, &data));
        assert!(db <= da * 1.005, "irls {da} adam {db}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn noiseless_log_link_recovery(b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, b2 in -2.0f64..2.0, seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 0);
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for _ in 0..150 {
                let d = 2.0 * open_uniform(&mut rng) - 1.0;
                let x = 2.0 * open_uniform(&mut rng) - 1.0;
                rows.extend([d, x]);
                y.push(exp(b0 + b1 * d + b2 * x));
            }
            let data = EncodedDataset::new(rows, layout(2), y, None).unwrap();
            for loss in [Loss::Poisson, Loss::Gamma, Loss::Tweedie { power: 1.5 }] {
                let m = fit_glm(&data, ModelFamily::Glm { link: Link::Log, loss }, &FitOptions::default()).unwrap();
                prop_assert!((m.intercept - b0).abs() < 1e-5);
                prop_assert!((m.coefficients[0] - b1).abs() < 1e-5);
                prop_assert!((m.coefficients[1] - b2).abs() < 1e-5);
            }
        }

        #[test]
        fn analytic_partials_match_differences(
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            d in -2.0f64..2.0,
            x in -2.0f64..2.0,
        ) {
            let glm = PredictionModel::glm(Link::Log, Loss::Gamma, b[0], vec![b[1], b[2]], layout(2)).unwrap();
            let fd = FnPredictor::new(1, 1, move |dd, xx| exp(b[0] + b[1] * dd[0] + b[2] * xx[0]));
            for f in [Feature::Protected(0), Feature::Covariate(0)] {
                let a = partial_g(&glm, f, &[d], &[x]).unwrap().value;
                let n = partial_g(&fd, f, &[d], &[x]).unwrap().value;
                prop_assert!((a - n).abs() <= 1e-4 * a.abs().max(1e-3));
            }
        }

        #[test]
        fn permutation_invariance(
            coef in proptest::collection::vec(-1.0f64..1.0, 4),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            d in -3.0f64..3.0,
        ) {
            let lay = FeatureLayout::continuous(&["D"], &["a", "b", "c"]);
            let m = PredictionModel::glm(Link::Log, Loss::Poisson, 0.1, coef.clone(), lay).unwrap();
            let perm = [2usize, 0, 1];
            let lay2 = FeatureLayout::continuous(&["D"], &["c", "a", "b"]);
            let coef2 = vec![coef[0], coef[1 + perm[0]], coef[1 + perm[1]], coef[1 + perm[2]]];
            let m2 = PredictionModel::glm(Link::Log, Loss::Poisson, 0.1, coef2, lay2).unwrap();
            let x2: Vec<f64> = perm.iter().map(|&j| x[j]).collect();
            let a = predict(&m, &[d], &x).unwrap();
            let b = predict(&m2, &[d], &x2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
