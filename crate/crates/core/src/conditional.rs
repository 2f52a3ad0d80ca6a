//! Conditional laws of the protected attributes and estimators of the
//! conditional quantities used by fair decision rules.
//!
//! Two kinds of objects live here:
//!
//! * [`ConditionalLaw`] implementations turn uniforms into draws of
//!   `D | X = x`. They drive every Monte Carlo sensitivity and oracle.
//! * [`ConditionalBackend`] answers point queries such as `E[D | X = x]`,
//!   either in closed form for a bivariate normal `(X, D)` or through fitted
//!   regressions (linear, gamma and Tweedie GLMs, multinomial logistic
//!   class probabilities and linear quantile regression).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{cholesky_factor_psd, cholesky_solve};
use crate::perturbation::{CompactLaw, ConditionalQuantile, DiscreteLevels};
use crate::predictors::{
    fit_glm, Feature, FeatureLayout, FitOptions, Link, Loss, ModelFamily, PredictionModel, Predictor,
    EncodedDataset, DEFAULT_TWEEDIE_POWER,
};
use crate::special::{exp, ln, normal_cdf, normal_pdf, normal_quantile, sqrt};

/// Bivariate normal law of `(X, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_d: f64,
    pub sigma_x: f64,
    pub sigma_d: f64,
    pub tau: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self { mu_x: 0.0, mu_d: 3.0, sigma_x: 1.0, sigma_d: 2.0, tau: 0.5 }
    }
}

impl GaussianParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu_x, self.mu_d, self.sigma_x, self.sigma_d, self.tau]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.sigma_x > 0.0) || !(self.sigma_d > 0.0) || !(self.tau.abs() < 1.0) {
            return Err(Error::invalid("gaussian backend needs σ_X > 0, σ_D > 0 and τ ∈ (−1, 1)"));
        }
        Ok(())
    }

    /// `E[D | X = x]`.
    #[must_use]
    pub fn cond_mean(&self, x: f64) -> f64 {
        self.mu_d + self.tau * self.sigma_d / self.sigma_x * (x - self.mu_x)
    }

    /// `Var(D | X) = σ_D²(1 − τ²)`.
    #[must_use]
    pub fn cond_var(&self) -> f64 {
        self.sigma_d * self.sigma_d * (1.0 - self.tau * self.tau)
    }

    /// Slope `τ σ_X / σ_D` of `F⁻¹_{X|D}(v | t)` in `t`.
    #[must_use]
    pub fn quantile_slope(&self) -> f64 {
        self.tau * self.sigma_x / self.sigma_d
    }

    /// Conditional quantile of `X` given `D`, for cascade propagation.
    #[must_use]
    pub fn x_given_d(&self) -> ConditionalQuantile {
        ConditionalQuantile::Gaussian {
            mean: self.mu_x,
            sd: self.sigma_x,
            protected_mean: self.mu_d,
            protected_sd: self.sigma_d,
            correlation: self.tau,
        }
    }
}

fn expect_scalar(x: &[f64]) -> Result<f64> {
    match x {
        [v] => Ok(*v),
        _ => Err(Error::invalid("the bivariate gaussian backend takes a single covariate")),
    }
}

/// A sampler of `D | X = x` driven by uniforms.
pub trait ConditionalLaw: Sync {
    /// Number of protected attributes drawn.
    fn protected_dim(&self) -> usize;
    /// Uniforms consumed per draw.
    fn uniform_dim(&self) -> usize;
    /// Draws for every row of `uniforms` (row-major, `uniform_dim` columns);
    /// returns row-major draws with `protected_dim` columns.
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>>;
}

impl ConditionalLaw for GaussianParams {
    fn protected_dim(&self) -> usize {
        1
    }
    fn uniform_dim(&self) -> usize {
        1
    }
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let m = self.cond_mean(expect_scalar(x)?);
        let s = sqrt(self.cond_var());
        Ok(uniforms.iter().map(|&u| m + s * normal_quantile(u)).collect())
    }
}

/// Jointly normal `(D₁, …, D_m, X₁, …, X_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGaussian {
    pub protected: usize,
    pub mean: Vec<f64>,
    /// Row-major covariance of `(D, X)`.
    pub cov: Vec<f64>,
}

impl JointGaussian {
    pub fn new(protected: usize, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let k = mean.len();
        if protected == 0 || protected > k || cov.len() != k * k {
            return Err(Error::invalid("joint gaussian needs a square covariance and 1 ≤ m ≤ dim"));
        }
        ensure_finite(&mean, "mean")?;
        ensure_finite(&cov, "covariance")?;
        for r in 0..k {
            for c in 0..r {
                if (cov[r * k + c] - cov[c * k + r]).abs() > 1e-12 * (1.0 + cov[r * k + c].abs()) {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
            }
        }
        Ok(Self { protected, mean, cov })
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean vector and row-major covariance of `D | X = x`.
    pub fn conditional(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (m, k) = (self.protected, self.dim());
        let n = k - m;
        if x.len() != n {
            return Err(Error::invalid("covariate vector has the wrong dimension"));
        }
        if n == 0 {
            return Ok((self.mean.clone(), self.cov.clone()));
        }
        let sxx: Vec<f64> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| self.cov[(m + r) * k + m + c]).collect();
        let resid: Vec<f64> = (0..n).map(|r| x[r] - self.mean[m + r]).collect();
        let alpha = cholesky_solve(&sxx, &resid)?;
        let mut mean = vec![0.0; m];
        for (a, mu) in mean.iter_mut().enumerate() {
            *mu = self.mean[a] + (0..n).map(|r| self.cov[a * k + m + r] * alpha[r]).sum::<f64>();
        }
        let mut cov = vec![0.0; m * m];
        for b in 0..m {
            let col: Vec<f64> = (0..n).map(|r| self.cov[(m + r) * k + b]).collect();
            let w = cholesky_solve(&sxx, &col)?;
            for a in 0..m {
                cov[a * m + b] = self.cov[a * k + b] - (0..n).map(|r| self.cov[a * k + m + r] * w[r]).sum::<f64>();
            }
        }
        Ok((mean, cov))
    }
}

impl ConditionalLaw for JointGaussian {
    fn protected_dim(&self) -> usize {
        self.protected
    }
    fn uniform_dim(&self) -> usize {
        self.protected
    }
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
        let m = self.protected;
        let (mean, cov) = self.conditional(x)?;
        let l = cholesky_factor_psd(&cov, m);
        let mut out = Vec::with_capacity(uniforms.len());
        for u in uniforms.chunks_exact(m) {
            let z: Vec<f64> = u.iter().map(|&v| normal_quantile(v)).collect();
            for a in 0..m {
                out.push(mean[a] + (0..=a).map(|b| l[a * m + b] * z[b]).sum::<f64>());
            }
        }
        Ok(out)
    }
}

/// Compact attribute `D = F⁻¹(Φ(Z))` with `(Z, X)` bivariate normal
/// (correlation `tau`, `X ~ N(x_mean, x_sd²)`); `tau = 0` gives `D ⊥ X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactCopula {
    pub law: CompactLaw,
    pub x_mean: f64,
    pub x_sd: f64,
    pub tau: f64,
}

impl CompactCopula {
    #[must_use]
    pub fn independent(law: CompactLaw) -> Self {
        Self { law, x_mean: 0.0, x_sd: 1.0, tau: 0.0 }
    }
}

impl ConditionalLaw for CompactCopula {
    fn protected_dim(&self) -> usize {
        1
    }
    fn uniform_dim(&self) -> usize {
        1
    }
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
        self.law.validate()?;
        if !(self.x_sd > 0.0 && self.tau.abs() < 1.0) {
            return Err(Error::invalid("compact copula needs x_sd > 0 and |τ| < 1"));
        }
        let zx = if self.tau == 0.0 { 0.0 } else { (expect_scalar(x)? - self.x_mean) / self.x_sd };
        let s = sqrt(1.0 - self.tau * self.tau);
        Ok(uniforms
            .iter()
            .map(|&u| self.law.quantile(normal_cdf(self.tau * zx + s * normal_quantile(u))))
            .collect())
    }
}

/// Source of `P(D = t_k | X = x)` for a discrete attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClassSource {
    /// `D ⊥ X`: the unconditional masses.
    Independent,
    Model(ClassProbabilityModel),
}

/// Discrete attribute with marginal levels and masses and conditional
/// class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    pub levels: DiscreteLevels,
    pub source: ClassSource,
}

impl DiscreteLaw {
    #[must_use]
    pub fn independent(levels: DiscreteLevels) -> Self {
        Self { levels, source: ClassSource::Independent }
    }

    /// `P(D = t_k | X = x)` for every level.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.source {
            ClassSource::Independent => Ok((0..self.levels.len()).map(|k| self.levels.mass(k)).collect()),
            ClassSource::Model(model) => {
                if model.levels != self.levels.levels() {
                    return Err(Error::invalid("class model levels differ from the attribute levels"));
                }
                model.probabilities(x)
            }
        }
    }
}

impl ConditionalLaw for DiscreteLaw {
    fn protected_dim(&self) -> usize {
        1
    }
    fn uniform_dim(&self) -> usize {
        1
    }
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
        let probs = self.probabilities(x)?;
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cum.push(acc);
        }
        let last = probs.len() - 1;
        let t = self.levels.levels();
        Ok(uniforms
            .iter()
            .map(|&u| t[cum.partition_point(|&c| c < u * acc).min(last)])
            .collect())
    }
}

/// Independent protected attributes sampled by their own laws.
pub struct ProductLaw<'a> {
    pub factors: Vec<&'a dyn ConditionalLaw>,
}

impl ConditionalLaw for ProductLaw<'_> {
    fn protected_dim(&self) -> usize {
        self.factors.iter().map(|f| f.protected_dim()).sum()
    }
    fn uniform_dim(&self) -> usize {
        self.factors.iter().map(|f| f.uniform_dim()).sum()
    }
    fn sample(&self, x: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
        let (m, k) = (self.protected_dim(), self.uniform_dim());
        let n = uniforms.len() / k.max(1);
        let mut out = vec![0.0; n * m];
        let (mut uoff, mut doff) = (0, 0);
        for f in &self.factors {
            let (fm, fk) = (f.protected_dim(), f.uniform_dim());
            let u: Vec<f64> = (0..n).flat_map(|j| uniforms[j * k + uoff..j * k + uoff + fk].iter().copied()).collect();
            let d = f.sample(x, &u)?;
            for j in 0..n {
                out[j * m + doff..j * m + doff + fm].copy_from_slice(&d[j * fm..(j + 1) * fm]);
            }
            uoff += fk;
            doff += fm;
        }
        Ok(out)
    }
}

/// Feature expansion applied to `x` before a regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Basis {
    Identity,
    /// Powers `x_j, x_j², …, x_j^degree` of every column (no interactions).
    Polynomial { degree: usize },
}

impl Basis {
    #[must_use]
    pub fn width(self, dim: usize) -> usize {
        match self {
            Basis::Identity => dim,
            Basis::Polynomial { degree } => dim * degree.max(1),
        }
    }

    #[must_use]
    pub fn expand(self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Identity => x.to_vec(),
            Basis::Polynomial { degree } => {
                let mut out = Vec::with_capacity(x.len() * degree);
                for &v in x {
                    let mut p = 1.0;
                    for _ in 0..degree.max(1) {
                        p *= v;
                        out.push(p);
                    }
                }
                out
            }
        }
    }

    fn dataset(self, x: &[f64], dim: usize, response: Vec<f64>, weights: Option<Vec<f64>>) -> Result<EncodedDataset> {
        if dim == 0 || x.len() != dim * response.len() {
            return Err(Error::invalid("covariate rows do not match the response length"));
        }
        let width = self.width(dim);
        let rows: Vec<f64> = x.chunks_exact(dim).flat_map(|r| self.expand(r)).collect();
        let names: Vec<String> = (0..width).map(|j| format!("b{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        EncodedDataset::new(rows, FeatureLayout::continuous(&[], &refs), response, weights)
    }
}

/// A regression of some target on `basis(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub basis: Basis,
    pub model: PredictionModel,
    /// `±1` reattached to a model fitted on `|target|`.
    pub sign: f64,
}

impl Regressor {
    /// Fits `family` on `(basis(x), target)`.
    pub fn fit(
        x: &[f64],
        dim: usize,
        target: &[f64],
        weights: Option<&[f64]>,
        basis: Basis,
        family: ModelFamily,
        options: &FitOptions,
    ) -> Result<Self> {
        let data = basis.dataset(x, dim, target.to_vec(), weights.map(<[f64]>::to_vec))?;
        let model = fit_glm(&data, family, options)?;
        Ok(Self { basis, model, sign: 1.0 })
    }

    /// Fits `family` on `|target|` and reattaches the sign of `Σ target`.
    pub fn fit_signed(
        x: &[f64],
        dim: usize,
        target: &[f64],
        weights: Option<&[f64]>,
        basis: Basis,
        family: ModelFamily,
        options: &FitOptions,
    ) -> Result<Self> {
        let total: f64 = target.iter().sum();
        let sign = if total < 0.0 { -1.0 } else { 1.0 };
        let abs: Vec<f64> = target.iter().map(|v| v.abs()).collect();
        let mut r = Self::fit(x, dim, &abs, weights, basis, family, options)?;
        r.sign = sign;
        Ok(r)
    }

    #[must_use]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.sign * self.model.eval(&[], &self.basis.expand(x))
    }
}

/// Options of [`ClassProbabilityModel::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFitOptions {
    /// Ridge penalty on standardized slopes (not on intercepts).
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClassFitOptions {
    fn default() -> Self {
        Self { ridge: 1e-6, max_iter: 200, tol: 1e-10 }
    }
}

/// Multinomial logistic regression of a discrete attribute on `basis(x)`,
/// with the first level as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilityModel {
    pub levels: Vec<f64>,
    pub basis: Basis,
    /// One `(intercept, slopes…)` row per non-reference level.
    pub coefficients: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl ClassProbabilityModel {
    /// Newton's method with step halving on the penalized mean log loss.
    pub fn fit(
        x: &[f64],
        dim: usize,
        d: &[f64],
        levels: &[f64],
        weights: Option<&[f64]>,
        basis: Basis,
        options: &ClassFitOptions,
    ) -> Result<Self> {
        let n = d.len();
        let k = levels.len();
        if k < 2 || dim == 0 || x.len() != n * dim || n == 0 {
            return Err(Error::invalid("class model needs ≥ 2 levels and matching rows"));
        }
        if weights.is_some_and(|w| w.len() != n) {
            return Err(Error::invalid("weights length differs from rows"));
        }
        let labels: Vec<usize> = d
            .iter()
            .map(|v| levels.iter().position(|l| l == v).ok_or_else(|| Error::InvalidInput(format!("unknown level {v}"))))
            .collect::<Result<_>>()?;
        let p = basis.width(dim);
        let feats: Vec<f64> = x.chunks_exact(dim).flat_map(|r| basis.expand(r)).collect();
        ensure_finite(&feats, "covariates")?;
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let wsum: f64 = (0..n).map(w).sum();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                mean[j] += w(i) * feats[i * p + j] / wsum;
            }
        }
        for i in 0..n {
            for j in 0..p {
                let c = feats[i * p + j] - mean[j];
                scale[j] += w(i) * c * c / wsum;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 0.0 { sqrt(*s) } else { 1.0 });
        let z = |i: usize, j: usize| if j == 0 { 1.0 } else { (feats[i * p + j - 1] - mean[j - 1]) / scale[j - 1] };
        let q = p + 1;
        let dim_theta = (k - 1) * q;
        let mut theta = vec![0.0; dim_theta];

        let softmax = |theta: &[f64], i: usize| -> Vec<f64> {
            let mut eta = vec![0.0; k];
            for c in 1..k {
                eta[c] = (0..q).map(|j| theta[(c - 1) * q + j] * z(i, j)).sum();
            }
            let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = eta.iter().map(|v| exp(v - mx)).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        };
        let penalty = |theta: &[f64]| -> f64 {
            0.5 * options.ridge * (1..k).flat_map(|c| (1..q).map(move |j| (c, j))).map(|(c, j)| { let t = theta[(c - 1) * q + j]; t * t }).sum::<f64>()
        };
        let objective = |theta: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                let pr = softmax(theta, i);
                s -= w(i) * ln(pr[labels[i]].max(1e-300));
            }
            s / wsum + penalty(theta)
        };

        let mut obj = objective(&theta);
        let mut iterations = 0;
        for it in 0..options.max_iter {
            iterations = it + 1;
            let mut grad = vec![0.0; dim_theta];
            let mut hess = vec![0.0; dim_theta * dim_theta];
            for i in 0..n {
                let pr = softmax(&theta, i);
                let wi = w(i) / wsum;
                for c in 1..k {
                    let r = pr[c] - if labels[i] == c { 1.0 } else { 0.0 };
                    for j in 0..q {
                        grad[(c - 1) * q + j] += wi * r * z(i, j);
                    }
                    for c2 in 1..k {
                        let h = wi * (if c == c2 { pr[c] } else { 0.0 } - pr[c] * pr[c2]);
                        if h == 0.0 {
                            continue;
                        }
                        for j in 0..q {
                            let zij = z(i, j);
                            let row = ((c - 1) * q + j) * dim_theta + (c2 - 1) * q;
                            for j2 in 0..q {
                                hess[row + j2] += h * zij * z(i, j2);
                            }
                        }
                    }
                }
            }
            for c in 1..k {
                for j in 1..q {
                    let a = (c - 1) * q + j;
                    grad[a] += options.ridge * theta[a];
                    hess[a * dim_theta + a] += options.ridge;
                }
            }
            for a in 0..dim_theta {
                hess[a * dim_theta + a] += 1e-12;
            }
            let gnorm = sqrt(grad.iter().map(|g| g * g).sum());
            if gnorm < options.tol {
                break;
            }
            let step = cholesky_solve(&hess, &grad)?;
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                let o = objective(&cand);
                if o <= obj || t < 1e-10 {
                    theta = cand;
                    obj = o;
                    break;
                }
                t *= 0.5;
            }
        }
        let coefficients = (1..k)
            .map(|c| {
                let row = &theta[(c - 1) * q..c * q];
                let mut out = vec![0.0; q];
                out[0] = row[0];
                for j in 1..q {
                    out[j] = row[j] / scale[j - 1];
                    out[0] -= row[j] * mean[j - 1] / scale[j - 1];
                }
                out
            })
            .collect();
        Ok(Self { levels: levels.to_vec(), basis, coefficients, iterations })
    }

    /// `P(D = t_k | X = x)` for every level, summing to one.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.basis.expand(x);
        if self.coefficients.iter().any(|c| c.len() != f.len() + 1) {
            return Err(Error::invalid("covariate vector has the wrong dimension"));
        }
        let mut eta = vec![0.0; self.levels.len()];
        for (c, coef) in self.coefficients.iter().enumerate() {
            eta[c + 1] = coef[0] + coef[1..].iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        }
        let mx = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = eta.iter().map(|v| exp(v - mx)).collect();
        let s: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / s).collect())
    }
}

/// Settings of the pinball-loss subgradient method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileOptions {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self { learning_rate: 0.01, iterations: 5000 }
    }
}

/// Linear conditional quantile `q_α(x) = b₀ + bᵀ basis(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRegression {
    pub alpha: f64,
    pub basis: Basis,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

fn weighted_quantile(values: &[f64], weights: &[f64], alpha: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= alpha * total {
            return values[i];
        }
    }
    values[idx[idx.len() - 1]]
}

impl QuantileRegression {
    /// Full-batch subgradient descent on the mean pinball loss with
    /// standardized features and a scaled response; the returned
    /// coefficients average the iterates of the second half of the run.
    pub fn fit(
        x: &[f64],
        dim: usize,
        y: &[f64],
        weights: Option<&[f64]>,
        alpha: f64,
        basis: Basis,
        options: &QuantileOptions,
    ) -> Result<Self> {
        let n = y.len();
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("quantile level must lie in (0, 1)"));
        }
        if n == 0 || dim == 0 || x.len() != n * dim || weights.is_some_and(|w| w.len() != n) {
            return Err(Error::invalid("quantile regression needs matching nonempty rows"));
        }
        ensure_finite(y, "response")?;
        let p = basis.width(dim);
        let feats: Vec<f64> = x.chunks_exact(dim).flat_map(|r| basis.expand(r)).collect();
        ensure_finite(&feats, "covariates")?;
        let ones = vec![1.0; n];
        let w = weights.unwrap_or(&ones);
        let wsum: f64 = w.iter().sum();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                mean[j] += w[i] * feats[i * p + j] / wsum;
            }
        }
        for i in 0..n {
            for j in 0..p {
                let c = feats[i * p + j] - mean[j];
                scale[j] += w[i] * c * c / wsum;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 0.0 { sqrt(*s) } else { 1.0 });
        let z: Vec<f64> = (0..n * p).map(|a| (feats[a] - mean[a % p]) / scale[a % p]).collect();
        let center = weighted_quantile(y, w, alpha);
        let spread = {
            let s = y.iter().zip(w).map(|(v, wi)| wi * (v - center).abs()).sum::<f64>() / wsum;
            if s > 0.0 { s } else { 1.0 }
        };
        let ys: Vec<f64> = y.iter().map(|v| (v - center) / spread).collect();

        let mut theta = vec![0.0; p + 1];
        let mut avg = vec![0.0; p + 1];
        let burn = options.iterations / 2;
        let mut grad = vec![0.0; p + 1];
        for it in 0..options.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let row = &z[i * p..(i + 1) * p];
                let q = theta[0] + theta[1..].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                let g = w[i] * if ys[i] > q { -alpha } else { 1.0 - alpha };
                grad[0] += g;
                for (gj, v) in grad[1..].iter_mut().zip(row) {
                    *gj += g * v;
                }
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= options.learning_rate * g / wsum;
            }
            if it >= burn {
                for (a, t) in avg.iter_mut().zip(&theta) {
                    *a += t;
                }
            }
        }
        let count = (options.iterations - burn).max(1) as f64;
        if options.iterations == 0 {
            avg.copy_from_slice(&theta);
        } else {
            avg.iter_mut().for_each(|a| *a /= count);
        }
        let mut intercept = center + spread * avg[0];
        let mut coefficients = vec![0.0; p];
        for j in 0..p {
            coefficients[j] = spread * avg[j + 1] / scale[j];
            intercept -= coefficients[j] * mean[j];
        }
        Ok(Self { alpha, basis, intercept, coefficients })
    }

    #[must_use]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(self.basis.expand(x)).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Settings for [`fit_conditional_tail`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub min_exceedances: usize,
    pub basis: Basis,
    pub family: ModelFamily,
    pub quantile: QuantileOptions,
    pub fit: FitOptions,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            min_exceedances: 50,
            basis: Basis::Identity,
            family: ModelFamily::Glm { link: Link::Log, loss: Loss::Tweedie { power: DEFAULT_TWEEDIE_POWER } },
            quantile: QuantileOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

/// Conditional VaR (quantile regression) and conditional expected shortfall
/// (GLM fitted on the rows above the fitted VaR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTail {
    pub var_level: f64,
    pub var_model: QuantileRegression,
    pub tail_model: Regressor,
    pub exceedances: usize,
}

/// Fits the conditional tail of `y` given `x` at level `alpha`.
pub fn fit_conditional_tail(
    x: &[f64],
    dim: usize,
    y: &[f64],
    weights: Option<&[f64]>,
    alpha: f64,
    options: &TailOptions,
) -> Result<ConditionalTail> {
    let var_model = QuantileRegression::fit(x, dim, y, weights, alpha, options.basis, &options.quantile)?;
    let idx: Vec<usize> = (0..y.len())
        .filter(|&i| y[i] > var_model.predict(&x[i * dim..(i + 1) * dim]))
        .collect();
    if idx.len() < options.min_exceedances {
        return Err(Error::TooFewExceedances { found: idx.len(), required: options.min_exceedances });
    }
    let xs: Vec<f64> = idx.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ws: Option<Vec<f64>> = weights.map(|w| idx.iter().map(|&i| w[i]).collect());
    let tail_model = Regressor::fit(&xs, dim, &ys, ws.as_deref(), options.basis, options.family, &options.fit)?;
    Ok(ConditionalTail { var_level: alpha, var_model, tail_model, exceedances: idx.len() })
}

/// `ES_α(Y | X = x)` from a fitted tail.
#[must_use]
pub fn cond_es(tail: &ConditionalTail, x: &[f64]) -> f64 {
    tail.tail_model.predict(x)
}

/// `ES_α` of `N(mean, sd²)`: `mean + sd φ(Φ⁻¹(α))/(1 − α)`.
#[must_use]
pub fn gaussian_es(mean: f64, sd: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return mean;
    }
    mean + sd * normal_pdf(normal_quantile(alpha)) / (1.0 - alpha)
}

/// Fitted regressions answering conditional queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionBackend {
    pub mean_d: Option<Regressor>,
    pub second_moment_d: Option<Regressor>,
    pub class_prob: Option<ClassProbabilityModel>,
    pub cross_term: Option<Regressor>,
    pub squared_term: Option<Regressor>,
}

fn fitted<'a, T>(slot: &'a Option<T>, what: &str) -> Result<&'a T> {
    slot.as_ref().ok_or_else(|| Error::NotFitted(what.to_string()))
}

impl RegressionBackend {
    /// Linear regression of `D` on `basis(x)`.
    pub fn fit_mean_d(&mut self, x: &[f64], dim: usize, d: &[f64], basis: Basis) -> Result<()> {
        self.mean_d = Some(Regressor::fit(x, dim, d, None, basis, ModelFamily::Linear, &FitOptions::default())?);
        Ok(())
    }

    /// Log-link gamma regression of `D²` on `basis(x)`.
    pub fn fit_second_moment_d(&mut self, x: &[f64], dim: usize, d: &[f64], basis: Basis) -> Result<()> {
        let target: Vec<f64> = d.iter().map(|v| v * v).collect();
        let family = ModelFamily::Glm { link: Link::Log, loss: Loss::Gamma };
        self.second_moment_d = Some(Regressor::fit(x, dim, &target, None, basis, family, &FitOptions::default())?);
        Ok(())
    }

    /// Multinomial logistic class probabilities.
    pub fn fit_class_prob(&mut self, x: &[f64], dim: usize, d: &[f64], levels: &[f64], basis: Basis) -> Result<()> {
        self.class_prob = Some(ClassProbabilityModel::fit(x, dim, d, levels, None, basis, &ClassFitOptions::default())?);
        Ok(())
    }

    /// Log-link Tweedie regression of `|target|` with the dominant sign
    /// reattached, where `target` holds per-row products `Y · W`.
    pub fn fit_cross_term(&mut self, x: &[f64], dim: usize, target: &[f64], basis: Basis) -> Result<()> {
        let family = ModelFamily::Glm { link: Link::Log, loss: Loss::Tweedie { power: DEFAULT_TWEEDIE_POWER } };
        self.cross_term = Some(Regressor::fit_signed(x, dim, target, None, basis, family, &FitOptions::default())?);
        Ok(())
    }

    /// Log-link gamma regression of the per-row squares `W²`.
    pub fn fit_squared_term(&mut self, x: &[f64], dim: usize, target: &[f64], basis: Basis) -> Result<()> {
        let family = ModelFamily::Glm { link: Link::Log, loss: Loss::Gamma };
        self.squared_term = Some(Regressor::fit(x, dim, target, None, basis, family, &FitOptions::default())?);
        Ok(())
    }
}

/// Where conditional quantities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConditionalBackend {
    AnalyticGaussian(GaussianParams),
    Regression(RegressionBackend),
}

/// `E[D | X = x]`.
pub fn cond_mean_d(backend: &ConditionalBackend, x: &[f64]) -> Result<f64> {
    match backend {
        ConditionalBackend::AnalyticGaussian(g) => {
            g.validate()?;
            Ok(g.cond_mean(expect_scalar(x)?))
        }
        ConditionalBackend::Regression(r) => Ok(fitted(&r.mean_d, "E[D|X] regressor")?.predict(x)),
    }
}

/// `E[D² | X = x]`.
pub fn cond_second_moment_d(backend: &ConditionalBackend, x: &[f64]) -> Result<f64> {
    match backend {
        ConditionalBackend::AnalyticGaussian(g) => {
            g.validate()?;
            let m = g.cond_mean(expect_scalar(x)?);
            Ok(g.cond_var() + m * m)
        }
        ConditionalBackend::Regression(r) => Ok(fitted(&r.second_moment_d, "E[D²|X] regressor")?.predict(x)),
    }
}

/// `P(D = t | X = x)`.
pub fn cond_class_prob(backend: &ConditionalBackend, level: f64, x: &[f64]) -> Result<f64> {
    match backend {
        ConditionalBackend::AnalyticGaussian(_) => {
            Err(Error::invalid("class probabilities need a discrete protected attribute"))
        }
        ConditionalBackend::Regression(r) => {
            let model = fitted(&r.class_prob, "class probability model")?;
            let k = model
                .levels
                .iter()
                .position(|&l| l == level)
                .ok_or_else(|| Error::InvalidInput(format!("unknown level {level}")))?;
            Ok(model.probabilities(x)?[k])
        }
    }
}

/// Number of Gauss–Hermite nodes used for analytic conditional expectations.
pub const HERMITE_NODES: usize = 48;

/// Nodes and weights for `E[f(Z)] ≈ Σ wₖ f(zₖ)` with `Z ~ N(0, 1)`.
#[must_use]
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = 0.751_125_544_464_942_5;
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => sqrt(2.0 * n as f64 + 1.0) - 1.855_75 * crate::special::powf(2.0 * n as f64 + 1.0, -0.166_67),
            1 => z - 1.14 * crate::special::powf(n as f64, 0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * sqrt(2.0 / (j + 1) as f64) * p2 - sqrt(j as f64 / (j + 1) as f64) * p3;
            }
            pp = sqrt(2.0 * n as f64) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    let s = sqrt(core::f64::consts::PI);
    let nodes = nodes.iter().map(|v| v * core::f64::consts::SQRT_2).collect();
    let weights = weights.iter().map(|v| v / s).collect();
    (nodes, weights)
}

/// `E[f(D) | X = x]` under the bivariate gaussian law, by Gauss–Hermite
/// quadrature with [`HERMITE_NODES`] nodes.
pub fn gaussian_expectation(g: &GaussianParams, x: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(HERMITE_NODES);
    let m = g.cond_mean(x);
    let s = sqrt(g.cond_var());
    let mut acc = 0.0;
    for (z, w) in nodes.iter().zip(&weights) {
        acc += w * f(m + s * z)?;
    }
    Ok(acc)
}

fn check_single(model: &dyn Predictor, i: usize) -> Result<()> {
    if model.protected_dim() != 1 || model.covariate_dim() != 1 || i != 0 {
        return Err(Error::invalid("the bivariate gaussian backend supports g(d, x) with scalar d and x"));
    }
    Ok(())
}

/// `E[Y D_i ∂_i g(D, X) | X = x]` with `Y = g(D, X) + ε`, `ε` centred and independent.
pub fn cond_cross_term(backend: &ConditionalBackend, model: &dyn Predictor, i: usize, x: &[f64]) -> Result<f64> {
    match backend {
        ConditionalBackend::AnalyticGaussian(g) => {
            g.validate()?;
            check_single(model, i)?;
            let xv = expect_scalar(x)?;
            gaussian_expectation(g, xv, |d| {
                let slope = model.partial(Feature::Protected(0), &[d], x)?.value;
                Ok(model.eval(&[d], x) * d * slope)
            })
        }
        ConditionalBackend::Regression(r) => Ok(fitted(&r.cross_term, "cross-term regressor")?.predict(x)),
    }
}

/// `E[(D_i ∂_i g(D, X))² | X = x]`.
pub fn cond_squared_term(backend: &ConditionalBackend, model: &dyn Predictor, i: usize, x: &[f64]) -> Result<f64> {
    match backend {
        ConditionalBackend::AnalyticGaussian(g) => {
            g.validate()?;
            check_single(model, i)?;
            let xv = expect_scalar(x)?;
            gaussian_expectation(g, xv, |d| {
                let slope = model.partial(Feature::Protected(0), &[d], x)?.value;
                Ok((d * slope) * (d * slope))
            })
        }
        ConditionalBackend::Regression(r) => Ok(fitted(&r.squared_term, "squared-term regressor")?.predict(x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::FeatureLayout;
    use crate::sampling::{open_uniform, stream_rng};

    fn linear_model() -> PredictionModel {
        PredictionModel::linear(1.0, vec![1.0, 2.0], FeatureLayout::continuous(&["d"], &["x"])).unwrap()
    }

    fn analytic() -> ConditionalBackend {
        ConditionalBackend::AnalyticGaussian(GaussianParams::default())
    }

    #[test]
    fn gaussian_moments() {
        let b = analytic();
        assert_eq!(cond_mean_d(&b, &[1.0]).unwrap(), 4.0);
        assert!((cond_second_moment_d(&b, &[1.0]).unwrap() - 19.0).abs() < 1e-12);
        let indep = ConditionalBackend::AnalyticGaussian(GaussianParams { tau: 0.0, ..GaussianParams::default() });
        for x in [-3.0, 0.0, 7.5] {
            assert_eq!(cond_mean_d(&indep, &[x]).unwrap(), 3.0);
            assert!((cond_second_moment_d(&indep, &[x]).unwrap() - 13.0).abs() < 1e-12);
        }
        let bad = ConditionalBackend::AnalyticGaussian(GaussianParams { tau: 1.0, ..GaussianParams::default() });
        assert!(cond_mean_d(&bad, &[0.0]).is_err());
        assert!(cond_class_prob(&b, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (z, w) = gauss_hermite(HERMITE_NODES);
        let moment = |k: i32| z.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn linear_cross_and_squared_terms() {
        let b = analytic();
        let m = linear_model();
        assert!((cond_cross_term(&b, &m, 0, &[0.0]).unwrap() - 15.0).abs() < 1e-10);
        assert!((cond_squared_term(&b, &m, 0, &[0.0]).unwrap() - 12.0).abs() < 1e-10);
        let flat = PredictionModel::linear(1.0, vec![0.0, 2.0], FeatureLayout::continuous(&["d"], &["x"])).unwrap();
        assert_eq!(cond_squared_term(&b, &flat, 0, &[0.0]).unwrap(), 0.0);
        let centred = ConditionalBackend::AnalyticGaussian(GaussianParams { tau: 0.0, mu_d: 0.0, ..GaussianParams::default() });
        assert!(cond_cross_term(&centred, &flat, 0, &[0.3]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn unfitted_regression_is_reported() {
        let b = ConditionalBackend::Regression(RegressionBackend::default());
        assert!(matches!(cond_mean_d(&b, &[0.0]), Err(Error::NotFitted(_))));
        assert!(matches!(cond_class_prob(&b, 1.0, &[0.0]), Err(Error::NotFitted(_))));
        assert!(matches!(cond_cross_term(&b, &linear_model(), 0, &[0.0]), Err(Error::NotFitted(_))));
    }

    #[test]
    fn es_constants() {
        assert!((gaussian_es(0.0, 1.0, 0.9) - 1.754_983_319_324_868_3).abs() < 1e-12);
        assert!((gaussian_es(0.0, 1.0, 0.95) - 2.062_712_807_507_427_5).abs() < 1e-12);
        assert_eq!(gaussian_es(2.5, 3.0, 0.0), 2.5);
    }

    #[test]
    fn joint_gaussian_conditional_matches_bivariate_formula() {
        let g = GaussianParams::default();
        let cov = vec![4.0, 0.5 * 2.0, 0.5 * 2.0, 1.0];
        let j = JointGaussian::new(1, vec![3.0, 0.0], cov).unwrap();
        let (m, c) = j.conditional(&[1.5]).unwrap();
        assert!((m[0] - g.cond_mean(1.5)).abs() < 1e-12);
        assert!((c[0] - g.cond_var()).abs() < 1e-12);
        let u = [0.1, 0.5, 0.9];
        let a = j.sample(&[1.5], &u).unwrap();
        let b = g.sample(&[1.5], &u).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn class_probabilities_normalize_and_separate() {
        let mut rng = stream_rng(5, 0);
        let n = 2000;
        let mut x = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let v = 4.0 * open_uniform(&mut rng) - 2.0;
            let v = if v.abs() < 0.2 { v + 0.4 * v.signum() } else { v };
            x.push(v);
            d.push(if v > 0.0 { 1.0 } else { 0.0 });
        }
        let mut reg = RegressionBackend::default();
        reg.fit_class_prob(&x, 1, &d, &[0.0, 1.0], Basis::Identity).unwrap();
        let b = ConditionalBackend::Regression(reg);
        for &v in &[-2.0, -1.0, -0.25, 0.25, 1.0, 2.0] {
            let p1 = cond_class_prob(&b, 1.0, &[v]).unwrap();
            let p0 = cond_class_prob(&b, 0.0, &[v]).unwrap();
            assert!((p0 + p1 - 1.0).abs() < 1e-12);
            if v > 0.0 {
                assert!(p1 >= 0.99, "p1 {p1} at {v}");
            } else {
                assert!(p0 >= 0.99, "p0 {p0} at {v}");
            }
        }
        assert!(cond_class_prob(&b, 2.0, &[0.0]).is_err());
    }

    #[test]
    fn quantile_regression_recovers_linear_quantile() {
        let mut rng = stream_rng(9, 0);
        let n = 5000;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let v = 2.0 * open_uniform(&mut rng) - 1.0;
            x.push(v);
            y.push(1.0 + 2.0 * v + normal_quantile(open_uniform(&mut rng)));
        }
        let q = QuantileRegression::fit(&x, 1, &y, None, 0.9, Basis::Identity, &QuantileOptions::default()).unwrap();
        let z = normal_quantile(0.9);
        assert!((q.intercept - (1.0 + z)).abs() < 0.08, "intercept {}", q.intercept);
        assert!((q.coefficients[0] - 2.0).abs() < 0.1, "slope {}", q.coefficients[0]);
    }

    #[test]
    fn too_few_exceedances() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
        let opts = TailOptions { quantile: QuantileOptions { iterations: 200, ..QuantileOptions::default() }, ..TailOptions::default() };
        assert!(matches!(
            fit_conditional_tail(&x, 1, &y, None, 0.9, &opts),
            Err(Error::TooFewExceedances { required: 50, .. })
        ));
    }

    #[test]
    fn discrete_and_compact_laws_sample_in_support() {
        let levels = DiscreteLevels::from_masses(vec![1.0, 2.0, 5.0], &[0.2, 0.3, 0.5]).unwrap();
        let law = DiscreteLaw::independent(levels);
        let u: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let d = law.sample(&[0.0], &u).unwrap();
        assert_eq!(d.iter().filter(|v| **v == 1.0).count(), 200);
        assert_eq!(d.iter().filter(|v| **v == 2.0).count(), 300);
        let c = CompactCopula { law: CompactLaw::Beta { alpha: 2.0, beta: 3.0, lower: 1.0, upper: 2.0 }, x_mean: 0.0, x_sd: 1.0, tau: 0.6 };
        let s = c.sample(&[1.0], &u).unwrap();
        assert!(s.iter().all(|v| (1.0..=2.0).contains(v)));
        let prod = ProductLaw { factors: vec![&law, &c] };
        let uu: Vec<f64> = u.iter().flat_map(|&a| [a, a]).collect();
        let both = prod.sample(&[1.0], &uu).unwrap();
        assert_eq!(both.len(), 2000);
        assert_eq!(both[0], d[0]);
        assert_eq!(both[1], s[0]);
    }
}
