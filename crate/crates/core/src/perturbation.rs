//! Perturbation schemes for protected attributes and cascade propagation.
//!
//! * Unbounded continuous attributes scale: `D_δ = D(1 + δ)`.
//! * Compact attributes distort probabilities through the Gaussian map
//!   `κ_δ(u) = Φ(Φ⁻¹(u)(1 + δ))`: `D_δ = F⁻¹(κ_δ(F(D)))`.
//! * Discrete attributes apply `κ_δ` to the generalized distributional
//!   transform `Ũ = p_{k−1} + V Δp_k` and read the level back off the
//!   cumulative masses, which moves probability between adjacent levels.
//! * Cascade perturbations push the new protected value through the
//!   inverse Rosenblatt factors `F⁻¹_{l|D_i}(V_l | t)` of dependent inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{beta_inc, beta_inc_inv, beta_pdf, exp, ln, normal_cdf, normal_pdf, normal_quantile, sqrt};

/// `D(1 + δ)`; requires `δ > −1`.
#[must_use]
pub fn perturb_continuous(d: f64, delta: f64) -> f64 {
    d * (1.0 + delta)
}

/// `κ_δ(u) = Φ(Φ⁻¹(u)(1 + δ))`.
#[must_use]
pub fn kappa(u: f64, delta: f64) -> f64 {
    normal_cdf(normal_quantile(u) * (1.0 + delta))
}

/// Distribution of a protected attribute with compact support `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CompactLaw {
    Uniform { lower: f64, upper: f64 },
    /// Beta(α, β) rescaled to `[lower, upper]`.
    Beta { alpha: f64, beta: f64, lower: f64, upper: f64 },
}

impl CompactLaw {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("compact support must be a finite interval with lower < upper"));
        }
        if let CompactLaw::Beta { alpha, beta, .. } = self {
            if !(*alpha > 0.0 && *beta > 0.0) {
                return Err(Error::invalid("beta shape parameters must be positive"));
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn support(&self) -> (f64, f64) {
        match *self {
            CompactLaw::Uniform { lower, upper } | CompactLaw::Beta { lower, upper, .. } => (lower, upper),
        }
    }

    /// `F(d)`.
    #[must_use]
    pub fn cdf(&self, d: f64) -> f64 {
        let (lo, hi) = self.support();
        let s = ((d - lo) / (hi - lo)).clamp(0.0, 1.0);
        match *self {
            CompactLaw::Uniform { .. } => s,
            CompactLaw::Beta { alpha, beta, .. } => beta_inc(alpha, beta, s),
        }
    }

    /// `f(d)`.
    #[must_use]
    pub fn pdf(&self, d: f64) -> f64 {
        let (lo, hi) = self.support();
        if d < lo || d > hi {
            return 0.0;
        }
        let s = (d - lo) / (hi - lo);
        match *self {
            CompactLaw::Uniform { .. } => 1.0 / (hi - lo),
            CompactLaw::Beta { alpha, beta, .. } => beta_pdf(alpha, beta, s) / (hi - lo),
        }
    }

    /// `F⁻¹(u)`.
    #[must_use]
    pub fn quantile(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        let s = match *self {
            CompactLaw::Uniform { .. } => u.clamp(0.0, 1.0),
            CompactLaw::Beta { alpha, beta, .. } => beta_inc_inv(alpha, beta, u),
        };
        lo + (hi - lo) * s
    }

    /// Latent normal score `Φ⁻¹(F(d))`.
    #[must_use]
    pub fn latent(&self, d: f64) -> f64 {
        normal_quantile(self.cdf(d))
    }
}

/// `F⁻¹(Φ(Φ⁻¹(u)(1 + δ)))` for `u ∈ (0, 1)`.
pub fn perturb_compact(u: f64, delta: f64, law: &CompactLaw) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidInput(format!("u must lie in (0, 1), got {u}")));
    }
    law.validate()?;
    Ok(law.quantile(kappa(u, delta)))
}

/// Perturbs an attribute value `d` of a compact law (`u = F(d)`).
#[must_use]
pub fn perturb_compact_value(d: f64, delta: f64, law: &CompactLaw) -> f64 {
    let z = law.latent(d);
    if !z.is_finite() || delta == 0.0 {
        return d;
    }
    law.quantile(normal_cdf(z * (1.0 + delta)))
}

/// Perturbed success mass `1 − Φ(Φ⁻¹(1 − p)/(1 + δ))` of a Bernoulli attribute.
#[must_use]
pub fn perturb_discrete_mass(p: f64, delta: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return p;
    }
    1.0 - perturbed_cumulative(1.0 - p, delta)
}

/// Perturbed cumulative mass `Φ(Φ⁻¹(p_k)/(1 + δ))`.
#[must_use]
pub fn perturbed_cumulative(p: f64, delta: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return p;
    }
    normal_cdf(normal_quantile(p) / (1.0 + delta))
}

/// Ordered levels `t₁ < … < t_K` of a discrete attribute with cumulative
/// masses `p₁ < … < p_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLevels {
    levels: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteLevels {
    pub fn new(levels: Vec<f64>, cumulative: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 || levels.len() != cumulative.len() {
            return Err(Error::invalid("discrete attribute needs K ≥ 2 levels with matching cumulative masses"));
        }
        for k in 0..levels.len() {
            if !levels[k].is_finite() || !cumulative[k].is_finite() {
                return Err(Error::invalid("levels and masses must be finite"));
            }
            if levels[..k].contains(&levels[k]) {
                return Err(Error::invalid("levels must be distinct"));
            }
            let prev = if k == 0 { 0.0 } else { cumulative[k - 1] };
            if !(cumulative[k] > prev) {
                return Err(Error::invalid("cumulative masses must be strictly increasing and positive"));
            }
        }
        if (cumulative[levels.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("the last cumulative mass must equal 1"));
        }
        let mut cumulative = cumulative;
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self { levels, cumulative })
    }

    /// From per-level masses (normalized).
    pub fn from_masses(levels: Vec<f64>, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || masses.iter().any(|m| *m < 0.0) {
            return Err(Error::invalid("masses must be nonnegative with a positive total"));
        }
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|m| {
                acc += m / total;
                acc
            })
            .collect();
        Self::new(levels, cumulative)
    }

    /// Bernoulli attribute on `{0, 1}` with `P(D = 1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![1.0 - p, 1.0])
    }

    #[must_use]
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    #[must_use]
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `p_{k−1}` (zero for the first level).
    #[must_use]
    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// `Δp_k = P(D = t_k)`.
    #[must_use]
    pub fn mass(&self, k: usize) -> f64 {
        self.cumulative[k] - self.lower(k)
    }

    /// Position of an exact level value.
    #[must_use]
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.levels.iter().position(|&l| l == t)
    }

    /// Generalized distributional transform `p_{k−1} + v Δp_k`.
    #[must_use]
    pub fn distributional_transform(&self, k: usize, v: f64) -> f64 {
        self.lower(k) + v * self.mass(k)
    }

    /// Level `j` with `κ_δ(ũ) ∈ (p_{j−1}, p_j]`.
    #[must_use]
    pub fn perturbed_level(&self, u_tilde: f64, delta: f64) -> usize {
        let u = if delta == 0.0 { u_tilde } else { kappa(u_tilde, delta) };
        self.cumulative
            .partition_point(|&c| c < u)
            .min(self.levels.len() - 1)
    }
}

/// Support type of a protected attribute, which selects its perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProtectedSpec {
    ContinuousUnbounded,
    ContinuousCompact { law: CompactLaw },
    Discrete { levels: DiscreteLevels },
}

/// Bins on each side used by [`QuantileTable::slope`].
pub const SLOPE_HALF_WINDOW: usize = 5;

/// Empirical conditional quantile table `F⁻¹(v | t)` on bins of `t`.
///
/// Values are interpolated linearly in `v` within a bin and linearly in `t`
/// between bin centres; inside the outer half bins the end curves are held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    bins: Vec<(f64, f64)>,
    v_grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl QuantileTable {
    pub fn new(bins: Vec<(f64, f64)>, v_grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if bins.is_empty() || v_grid.len() < 2 || values.len() != bins.len() {
            return Err(Error::invalid("quantile table needs bins and at least two v nodes"));
        }
        for w in v_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("v grid must be strictly increasing"));
            }
        }
        if v_grid[0] < 0.0 || v_grid[v_grid.len() - 1] > 1.0 {
            return Err(Error::invalid("v grid must lie in [0, 1]"));
        }
        for (b, row) in values.iter().enumerate() {
            if row.len() != v_grid.len() {
                return Err(Error::invalid("every bin needs one quantile per v node"));
            }
            if row.windows(2).any(|w| w[1] < w[0]) || row.iter().any(|q| !q.is_finite()) {
                return Err(Error::InvalidInput(format!("bin {b}: quantiles must be finite and nondecreasing in v")));
            }
            let (lo, hi) = bins[b];
            if !(hi > lo) || (b > 0 && lo < bins[b - 1].1) {
                return Err(Error::invalid("bins must be ordered and non-overlapping"));
            }
        }
        Ok(Self { bins, v_grid, values })
    }

    /// Builds a table from `(bin_lower, bin_upper, v, quantile)` rows.
    pub fn from_rows(rows: &[(f64, f64, f64, f64)]) -> Result<Self> {
        let mut bins: Vec<(f64, f64)> = Vec::new();
        let mut v_grid: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for &(lo, hi, v, q) in rows {
            if bins.last() != Some(&(lo, hi)) {
                bins.push((lo, hi));
                values.push(Vec::new());
            }
            if bins.len() == 1 {
                v_grid.push(v);
            } else if v_grid.get(values.last().expect("pushed").len()) != Some(&v) {
                return Err(Error::invalid("all bins must share the same v grid, in the same order"));
            }
            values.last_mut().expect("pushed").push(q);
        }
        Self::new(bins, v_grid, values)
    }

    /// `(bin_lower, bin_upper, v, quantile)` rows.
    #[must_use]
    pub fn to_rows(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for (b, &(lo, hi)) in self.bins.iter().enumerate() {
            for (k, &v) in self.v_grid.iter().enumerate() {
                out.push((lo, hi, v, self.values[b][k]));
            }
        }
        out
    }

    /// Equal-count bins of `t` with empirical quantiles of `y` per bin.
    pub fn from_samples(t: &[f64], y: &[f64], n_bins: usize, v_grid: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() || t.len() < 2 * n_bins || n_bins == 0 {
            return Err(Error::invalid("need matching samples with at least two per bin"));
        }
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
        let n = t.len();
        let mut bins = Vec::with_capacity(n_bins);
        let mut values = Vec::with_capacity(n_bins);
        for b in 0..n_bins {
            let (s, e) = (b * n / n_bins, (b + 1) * n / n_bins);
            let idx = &order[s..e];
            let lo = if b == 0 { t[idx[0]] } else { bins.last().map_or(t[idx[0]], |x: &(f64, f64)| x.1) };
            let hi = if b + 1 == n_bins { t[idx[idx.len() - 1]] } else { 0.5 * (t[idx[idx.len() - 1]] + t[order[e]]) };
            bins.push((lo, hi));
            let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            ys.sort_by(f64::total_cmp);
            let m = ys.len();
            let row = v_grid
                .iter()
                .map(|&v| {
                    let pos = v * m as f64 - 0.5;
                    if pos <= 0.0 {
                        ys[0]
                    } else if pos >= (m - 1) as f64 {
                        ys[m - 1]
                    } else {
                        let k = pos as usize;
                        let f = pos - k as f64;
                        ys[k] + f * (ys[k + 1] - ys[k])
                    }
                })
                .collect();
            values.push(row);
        }
        Self::new(bins, v_grid, values)
    }

    fn range(&self) -> (f64, f64) {
        (self.bins[0].0, self.bins[self.bins.len() - 1].1)
    }

    fn curve_at(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.range();
        if t < lo || t > hi {
            return Err(Error::Numerical(format!("t = {t} outside the quantile table range [{lo}, {hi}]")));
        }
        let centres: Vec<f64> = self.bins.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let nb = centres.len();
        if t <= centres[0] || nb == 1 {
            return Ok(self.values[0].clone());
        }
        if t >= centres[nb - 1] {
            return Ok(self.values[nb - 1].clone());
        }
        let b = centres.partition_point(|&c| c <= t);
        let w = (t - centres[b - 1]) / (centres[b] - centres[b - 1]);
        Ok(self.values[b - 1]
            .iter()
            .zip(&self.values[b])
            .map(|(a, c)| a + w * (c - a))
            .collect())
    }

    pub fn quantile(&self, v: f64, t: f64) -> Result<f64> {
        let curve = self.curve_at(t)?;
        let g = &self.v_grid;
        if v <= g[0] {
            return Ok(curve[0]);
        }
        if v >= g[g.len() - 1] {
            return Ok(curve[g.len() - 1]);
        }
        let k = g.partition_point(|&x| x <= v);
        let w = (v - g[k - 1]) / (g[k] - g[k - 1]);
        Ok(curve[k - 1] + w * (curve[k] - curve[k - 1]))
    }

    pub fn cdf(&self, y: f64, t: f64) -> Result<f64> {
        let curve = self.curve_at(t)?;
        let g = &self.v_grid;
        if y <= curve[0] {
            return Ok(g[0]);
        }
        if y >= curve[curve.len() - 1] {
            return Ok(g[g.len() - 1]);
        }
        let k = curve.partition_point(|&q| q < y);
        let (q0, q1) = (curve[k - 1], curve[k]);
        let w = if q1 > q0 { (y - q0) / (q1 - q0) } else { 0.0 };
        Ok(g[k - 1] + w * (g[k] - g[k - 1]))
    }

    /// Local least-squares slope in `t` of the quantile at level `v`, fitted
    /// over the `2 SLOPE_HALF_WINDOW + 1` bins whose centres are nearest `t`.
    pub fn slope(&self, v: f64, t: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let nb = self.bins.len();
        let half = SLOPE_HALF_WINDOW.min((nb - 1) / 2);
        if t < lo || t > hi || half == 0 {
            return Err(Error::Numerical(format!(
                "conditional quantile not differentiable at t = {t}, v = {v}: outside the table"
            )));
        }
        let centres: Vec<f64> = self.bins.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        let nearest = self.bins.partition_point(|&(_, b)| b < t).min(nb - 1);
        if nearest < half || nearest + half >= nb {
            return Err(Error::Numerical(format!(
                "conditional quantile not differentiable at t = {t}, v = {v}: too close to the table edge"
            )));
        }
        let window = nearest - half..=nearest + half;
        let g = &self.v_grid;
        let k = g.partition_point(|&x| x <= v).clamp(1, g.len() - 1);
        let w = ((v - g[k - 1]) / (g[k] - g[k - 1])).clamp(0.0, 1.0);
        let q = |b: usize| self.values[b][k - 1] + w * (self.values[b][k] - self.values[b][k - 1]);
        let m = window.clone().count() as f64;
        let cx = window.clone().map(|b| centres[b]).sum::<f64>() / m;
        let cy = window.clone().map(q).sum::<f64>() / m;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for b in window {
            sxy += (centres[b] - cx) * (q(b) - cy);
            sxx += (centres[b] - cx) * (centres[b] - cx);
        }
        Ok(sxy / sxx)
    }
}

/// Conditional quantile `F⁻¹_{l|D_i}(v | t)` of one propagated input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConditionalQuantile {
    /// Bivariate normal `(X_l, D_i)` with the given moments and correlation.
    Gaussian {
        mean: f64,
        sd: f64,
        protected_mean: f64,
        protected_sd: f64,
        correlation: f64,
    },
    /// `X_l | D_i = t_k ~ LogNormal(μ_k, σ_k²)` for a discrete attribute.
    LogNormalByLevel { levels: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64> },
    Table(QuantileTable),
}

impl ConditionalQuantile {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConditionalQuantile::Gaussian { sd, protected_sd, correlation, .. } => {
                if !(*sd > 0.0 && *protected_sd > 0.0 && correlation.abs() < 1.0) {
                    return Err(Error::invalid("gaussian conditional quantile needs positive scales and |ρ| < 1"));
                }
            }
            ConditionalQuantile::LogNormalByLevel { levels, mu, sigma } => {
                if levels.len() != mu.len() || levels.len() != sigma.len() || sigma.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::invalid("lognormal-by-level needs one (μ, σ > 0) per level"));
                }
            }
            ConditionalQuantile::Table(_) => {}
        }
        Ok(())
    }

    fn level(levels: &[f64], t: f64) -> Result<usize> {
        levels
            .iter()
            .position(|&l| l == t)
            .ok_or_else(|| Error::InvalidInput(format!("unknown level {t}")))
    }

    pub fn quantile(&self, v: f64, t: f64) -> Result<f64> {
        match self {
            ConditionalQuantile::Gaussian { mean, sd, protected_mean, protected_sd, correlation } => {
                let cond_mean = mean + correlation * sd / protected_sd * (t - protected_mean);
                let cond_sd = sd * sqrt(1.0 - correlation * correlation);
                Ok(cond_mean + cond_sd * normal_quantile(v))
            }
            ConditionalQuantile::LogNormalByLevel { levels, mu, sigma } => {
                let k = Self::level(levels, t)?;
                Ok(exp(mu[k] + sigma[k] * normal_quantile(v)))
            }
            ConditionalQuantile::Table(table) => table.quantile(v, t),
        }
    }

    pub fn cdf(&self, y: f64, t: f64) -> Result<f64> {
        match self {
            ConditionalQuantile::Gaussian { mean, sd, protected_mean, protected_sd, correlation } => {
                let cond_mean = mean + correlation * sd / protected_sd * (t - protected_mean);
                let cond_sd = sd * sqrt(1.0 - correlation * correlation);
                Ok(normal_cdf((y - cond_mean) / cond_sd))
            }
            ConditionalQuantile::LogNormalByLevel { levels, mu, sigma } => {
                let k = Self::level(levels, t)?;
                Ok(if y <= 0.0 { 0.0 } else { normal_cdf((ln(y) - mu[k]) / sigma[k]) })
            }
            ConditionalQuantile::Table(table) => table.cdf(y, t),
        }
    }

    /// `∂/∂t F⁻¹(v | t)`.
    pub fn slope(&self, v: f64, t: f64) -> Result<f64> {
        match self {
            ConditionalQuantile::Gaussian { sd, protected_sd, correlation, .. } => Ok(correlation * sd / protected_sd),
            ConditionalQuantile::LogNormalByLevel { .. } => Err(Error::Numerical(format!(
                "conditional quantile of a discrete attribute is not differentiable at t = {t}, v = {v}"
            ))),
            ConditionalQuantile::Table(table) => table.slope(v, t),
        }
    }
}

/// Inverse Rosenblatt propagation of a perturbation of `D_i`.
///
/// Inputs are addressed by their flat index in `(d, x)`. Inputs with a
/// conditional quantile that are not masked follow `D_i`; all others keep
/// their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub protected: usize,
    pub quantiles: Vec<Option<ConditionalQuantile>>,
    pub mask: Vec<usize>,
}

impl CascadeSpec {
    pub fn new(protected: usize, quantiles: Vec<Option<ConditionalQuantile>>, mask: Vec<usize>) -> Result<Self> {
        if protected >= quantiles.len() {
            return Err(Error::invalid("protected index outside the feature vector"));
        }
        if quantiles[protected].is_some() {
            return Err(Error::invalid("the perturbed attribute cannot have a conditional quantile"));
        }
        for q in quantiles.iter().flatten() {
            q.validate()?;
        }
        Ok(Self { protected, quantiles, mask })
    }

    /// Whether input `l` follows the perturbation.
    #[must_use]
    pub fn propagates(&self, l: usize) -> bool {
        l != self.protected && !self.mask.contains(&l) && self.quantiles.get(l).is_some_and(Option::is_some)
    }

    /// Flat indices that follow the perturbation.
    #[must_use]
    pub fn propagated(&self) -> Vec<usize> {
        (0..self.quantiles.len()).filter(|&l| self.propagates(l)).collect()
    }

    /// Same spec with every dependent input masked.
    #[must_use]
    pub fn fully_masked(&self) -> Self {
        Self {
            protected: self.protected,
            quantiles: self.quantiles.clone(),
            mask: (0..self.quantiles.len()).filter(|&l| l != self.protected).collect(),
        }
    }

    /// Rosenblatt uniforms `V_l = F_{l|D_i}(x_l | d_i)` of the propagated inputs
    /// (`NaN` elsewhere).
    pub fn rosenblatt(&self, features: &[f64]) -> Result<Vec<f64>> {
        let t = features[self.protected];
        let mut v = vec![f64::NAN; features.len()];
        for l in self.propagated() {
            let q = self.quantiles[l].as_ref().expect("propagated inputs have quantiles");
            v[l] = q.cdf(features[l], t)?;
        }
        Ok(v)
    }

    /// `∂/∂t F⁻¹_{l|D_i}(v | t)`.
    pub fn slope(&self, l: usize, v: f64, t: f64) -> Result<f64> {
        match self.quantiles.get(l).and_then(Option::as_ref) {
            Some(q) => q.slope(v, t),
            None => Err(Error::InvalidInput(format!("no conditional quantile for input {l}"))),
        }
    }
}

/// The perturbed input vector: `D_i` replaced by `t_new` and every
/// propagated input set to `F⁻¹_{l|D_i}(v_l | t_new)`.
///
/// When `t_new` equals the current value the input vector is returned unchanged.
pub fn cascade_sample(spec: &CascadeSpec, features: &[f64], t_new: f64, v: &[f64]) -> Result<Vec<f64>> {
    if features.len() != spec.quantiles.len() || v.len() != features.len() {
        return Err(Error::invalid("cascade input has the wrong dimension"));
    }
    let mut out = features.to_vec();
    if t_new == features[spec.protected] {
        return Ok(out);
    }
    out[spec.protected] = t_new;
    for l in spec.propagated() {
        let q = spec.quantiles[l].as_ref().expect("propagated inputs have quantiles");
        out[l] = q.quantile(v[l], t_new)?;
    }
    Ok(out)
}

/// `∂/∂t F⁻¹_{l|D_i}(v | t)` for input `l`.
pub fn cond_quantile_slope(spec: &CascadeSpec, l: usize, v: f64, t: f64) -> Result<f64> {
    spec.slope(l, v, t)
}

/// `φ(z)`-based helper used by compact sensitivities: `z φ(z) / f(d)`.
#[must_use]
pub fn compact_pathwise_factor(d: f64, law: &CompactLaw) -> f64 {
    let z = law.latent(d);
    if !z.is_finite() {
        return 0.0;
    }
    z * normal_pdf(z) / law.pdf(d)
}
