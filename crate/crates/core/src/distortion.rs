//! Weight functions and generalized distortion risk measures.
//!
//! A weight function `γ` on `(0, 1)` defines `ρ_γ(Y) = ∫₀¹ F⁻¹_Y(u) γ(u) du`.
//! On a weighted empirical distribution the quantile function is a step
//! function, so the integral is evaluated exactly: each atom contributes its
//! value times the integral of `γ` over its cdf interval.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::special::{
    compensated_sum, integral_normal_quantile, integral_u_normal_quantile, normal_pdf,
    normal_quantile,
};

/// Shape of a weight function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightKind {
    /// `γ ≡ 1`.
    ExpectedValue,
    /// `γ(u) = 1{u ≥ α} / (1 − α)`.
    ExpectedShortfall { level: f64 },
    /// Piecewise-linear interpolation of `(u, γ(u))` nodes, held constant
    /// outside the first and last node.
    Tabulated { grid: Vec<(f64, f64)> },
    /// `Σ c_k γ_k`.
    Combination { terms: Vec<(f64, WeightFunction)> },
}

/// The `γ` of a generalized distortion risk measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub kind: WeightKind,
    pub label: String,
}

impl WeightFunction {
    #[must_use]
    pub fn expected_value() -> Self {
        Self {
            kind: WeightKind::ExpectedValue,
            label: "EV".to_string(),
        }
    }

    pub fn expected_shortfall(level: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&level) {
            return Err(Error::InvalidInput(alloc::format!(
                "invalid expected shortfall level: must be in [0, 1), got {level}"
            )));
        }
        Ok(Self {
            kind: WeightKind::ExpectedShortfall { level },
            label: alloc::format!("ES{level}"),
        })
    }

    /// Builds a tabulated weight function from `(u, γ(u))` nodes.
    pub fn tabulated(grid: Vec<(f64, f64)>, label: impl Into<String>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::invalid("tabulated weight function needs at least one node"));
        }
        for (k, &(u, g)) in grid.iter().enumerate() {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::InvalidInput(alloc::format!(
                    "tabulated node {k}: u must lie in (0, 1), got {u}"
                )));
            }
            if !g.is_finite() {
                return Err(Error::InvalidInput(alloc::format!(
                    "tabulated node {k}: gamma is not finite"
                )));
            }
            if k > 0 && u <= grid[k - 1].0 {
                return Err(Error::InvalidInput(alloc::format!(
                    "tabulated nodes must be strictly increasing in u (node {k})"
                )));
            }
        }
        let w = Self {
            kind: WeightKind::Tabulated { grid },
            label: label.into(),
        };
        if !w.square_integral().is_finite() {
            return Err(Error::invalid("tabulated weight function is not square integrable"));
        }
        Ok(w)
    }

    /// Linear combination `Σ c_k γ_k`.
    pub fn combination(terms: Vec<(f64, WeightFunction)>, label: impl Into<String>) -> Result<Self> {
        if terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(Error::invalid("combination coefficients must be finite"));
        }
        Ok(Self {
            kind: WeightKind::Combination { terms },
            label: label.into(),
        })
    }

    /// Parses `ev`, `es:<level>` (and `es<level>`).
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.trim().to_ascii_lowercase();
        if s == "ev" || s == "mean" {
            return Ok(Self::expected_value());
        }
        let level = s
            .strip_prefix("es:")
            .or_else(|| s.strip_prefix("es"))
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown risk measure '{spec}'")))?;
        let level: f64 = level
            .parse()
            .map_err(|_| Error::InvalidInput(alloc::format!("unknown risk measure '{spec}'")))?;
        Self::expected_shortfall(level)
    }

    /// `γ(u)`.
    #[must_use]
    pub fn value(&self, u: f64) -> f64 {
        match &self.kind {
            WeightKind::ExpectedValue => 1.0,
            WeightKind::ExpectedShortfall { level } => {
                if u >= *level {
                    1.0 / (1.0 - level)
                } else {
                    0.0
                }
            }
            WeightKind::Tabulated { grid } => interpolate(grid, u),
            WeightKind::Combination { terms } => terms.iter().map(|(c, w)| c * w.value(u)).sum(),
        }
    }

    /// `∫₀^u γ(s) ds` for `u ∈ [0, 1]`.
    #[must_use]
    pub fn antiderivative(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            WeightKind::ExpectedValue => u,
            WeightKind::ExpectedShortfall { level } => {
                if u <= *level {
                    0.0
                } else {
                    (u - level) / (1.0 - level)
                }
            }
            WeightKind::Tabulated { grid } => tabulated_antiderivative(grid, u),
            WeightKind::Combination { terms } => {
                terms.iter().map(|(c, w)| c * w.antiderivative(u)).sum()
            }
        }
    }

    /// `∫_a^b γ(u) du`.
    #[must_use]
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            WeightKind::ExpectedValue => b.clamp(0.0, 1.0) - a.clamp(0.0, 1.0),
            _ => self.antiderivative(b) - self.antiderivative(a),
        }
    }

    /// Average of `γ` over `(a, b]`; `γ(b)` when the interval is empty.
    #[must_use]
    pub fn interval_mean(&self, a: f64, b: f64) -> f64 {
        if b > a {
            self.integral(a, b) / (b - a)
        } else {
            self.value(b)
        }
    }

    /// `∫₀¹ γ(u) du`.
    #[must_use]
    pub fn total_mass(&self) -> f64 {
        self.integral(0.0, 1.0)
    }

    /// `∫₀¹ Φ⁻¹(u) γ(u) du`, the standardized value of `ρ_γ` on a normal law.
    #[must_use]
    pub fn normal_score_moment(&self) -> f64 {
        match &self.kind {
            WeightKind::ExpectedValue => 0.0,
            WeightKind::ExpectedShortfall { level } => {
                if *level == 0.0 {
                    0.0
                } else {
                    normal_pdf(normal_quantile(*level)) / (1.0 - level)
                }
            }
            WeightKind::Tabulated { grid } => {
                let (u0, g0) = grid[0];
                let (un, gn) = grid[grid.len() - 1];
                let mut total = g0 * integral_normal_quantile(0.0, u0)
                    + gn * integral_normal_quantile(un, 1.0);
                for w in grid.windows(2) {
                    let ((a, ga), (b, gb)) = (w[0], w[1]);
                    let slope = (gb - ga) / (b - a);
                    let intercept = ga - slope * a;
                    total += intercept * integral_normal_quantile(a, b)
                        + slope * integral_u_normal_quantile(a, b);
                }
                total
            }
            WeightKind::Combination { terms } => {
                terms.iter().map(|(c, w)| c * w.normal_score_moment()).sum()
            }
        }
    }

    /// `∫₀¹ γ(u)² du`.
    #[must_use]
    pub fn square_integral(&self) -> f64 {
        match &self.kind {
            WeightKind::ExpectedValue => 1.0,
            WeightKind::ExpectedShortfall { level } => 1.0 / (1.0 - level),
            WeightKind::Tabulated { grid } => {
                let (u0, g0) = grid[0];
                let (un, gn) = grid[grid.len() - 1];
                let mut total = g0 * g0 * u0 + gn * gn * (1.0 - un);
                for w in grid.windows(2) {
                    let ((a, ga), (b, gb)) = (w[0], w[1]);
                    total += (b - a) * (ga * ga + ga * gb + gb * gb) / 3.0;
                }
                total
            }
            WeightKind::Combination { .. } => {
                let n = 100_000;
                (0..n)
                    .map(|k| {
                        let g = self.value((k as f64 + 0.5) / n as f64);
                        g * g
                    })
                    .sum::<f64>()
                    / n as f64
            }
        }
    }

    /// `γ − 1`, the weight of the margin in the EV + margin decomposition.
    #[must_use]
    pub fn margin_weight(&self) -> Self {
        Self {
            kind: WeightKind::Combination {
                terms: vec![(1.0, self.clone()), (-1.0, Self::expected_value())],
            },
            label: alloc::format!("{}-margin", self.label),
        }
    }
}

fn interpolate(grid: &[(f64, f64)], u: f64) -> f64 {
    let first = grid[0];
    let last = grid[grid.len() - 1];
    if u <= first.0 {
        return first.1;
    }
    if u >= last.0 {
        return last.1;
    }
    let k = grid.partition_point(|&(g, _)| g <= u);
    let (a, ga) = grid[k - 1];
    let (b, gb) = grid[k];
    ga + (gb - ga) * (u - a) / (b - a)
}

fn tabulated_antiderivative(grid: &[(f64, f64)], u: f64) -> f64 {
    let (u0, g0) = grid[0];
    if u <= u0 {
        return g0 * u;
    }
    let mut acc = g0 * u0;
    for w in grid.windows(2) {
        let ((a, ga), (b, gb)) = (w[0], w[1]);
        if u <= b {
            let gu = ga + (gb - ga) * (u - a) / (b - a);
            return acc + 0.5 * (ga + gu) * (u - a);
        }
        acc += 0.5 * (ga + gb) * (b - a);
    }
    let (un, gn) = grid[grid.len() - 1];
    acc + gn * (u - un)
}

/// Weighted empirical distribution with sorted support.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
    cumulative: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Equally weighted sample.
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        ensure_finite(values, "sample")?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let cumulative = (1..=sorted.len()).map(|i| i as f64 / n).collect();
        Ok(Self {
            values: sorted,
            weights: None,
            cumulative,
        })
    }

    /// Weighted sample; weights are normalized to sum to one.
    pub fn weighted(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if values.len() != weights.len() {
            return Err(Error::invalid("values and weights differ in length"));
        }
        ensure_finite(values, "sample")?;
        ensure_finite(weights, "weights")?;
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let w: Vec<f64> = order.iter().map(|&i| weights[i] / total).collect();
        let mut cumulative = Vec::with_capacity(w.len());
        let (mut s, mut c) = (0.0_f64, 0.0_f64);
        for &wi in &w {
            let y = wi - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
            cumulative.push(s.min(1.0));
        }
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self {
            values: sorted,
            weights: Some(w),
            cumulative,
        })
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[must_use]
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `F(y) = P(Y ≤ y)`.
    #[must_use]
    pub fn cdf(&self, y: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= y);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Weighted mean.
    #[must_use]
    pub fn mean(&self) -> f64 {
        match &self.weights {
            None => crate::special::mean(&self.values),
            Some(w) => compensated_sum(self.values.iter().zip(w).map(|(v, w)| v * w)),
        }
    }
}

/// Left-continuous quantile `inf{y : F(y) ≥ u}`.
pub fn quantile(dist: &EmpiricalDistribution, u: f64) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "quantile level must lie in (0, 1), got {u}"
        )));
    }
    let k = dist.cumulative.partition_point(|&c| c < u);
    Ok(dist.values[k.min(dist.len() - 1)])
}

/// `∫₀¹ F⁻¹(u) γ(u) du`, exact for the step quantile of `dist`.
pub fn evaluate(rho: &WeightFunction, dist: &EmpiricalDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if let WeightKind::ExpectedValue = rho.kind {
        return Ok(dist.mean());
    }
    let mut prev = 0.0;
    let mut prev_anti = 0.0;
    let terms = dist.values.iter().zip(&dist.cumulative).map(|(&y, &c)| {
        let anti = rho.antiderivative(c);
        let contrib = if c > prev { y * (anti - prev_anti) } else { 0.0 };
        prev = c;
        prev_anti = anti;
        contrib
    });
    Ok(compensated_sum(terms))
}

/// Risk measure split into expectation and margin, `ρ_γ = E[Y] + ρ_{γ−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub total: f64,
    pub expectation: f64,
    pub margin: f64,
}

pub fn decompose(rho: &WeightFunction, dist: &EmpiricalDistribution) -> Result<RiskDecomposition> {
    let total = evaluate(rho, dist)?;
    let expectation = dist.mean();
    let margin = evaluate(&rho.margin_weight(), dist)?;
    Ok(RiskDecomposition {
        total,
        expectation,
        margin,
    })
}

/// Per-observation weights `γ̄_j`: the average of `γ` over observation `j`'s
/// cdf interval, with tied observations sharing the average over their
/// combined interval.
///
/// With `weights = None` the sample is equally weighted. For any sample,
/// `Σ_j w_j y_j γ̄_j = evaluate(γ, F̂)`.
pub fn rank_weights(rho: &WeightFunction, values: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(Error::invalid("empty sample"));
    }
    ensure_finite(values, "sample")?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; n];
    let total = match weights {
        None => n as f64,
        Some(w) => {
            if w.len() != n {
                return Err(Error::invalid("values and weights differ in length"));
            }
            compensated_sum(w.iter().copied())
        }
    };
    let mut start = 0;
    let mut mass_before = 0.0_f64;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let block_mass = match weights {
            None => (end - start) as f64,
            Some(w) => order[start..end].iter().map(|&i| w[i]).sum(),
        };
        let a = mass_before / total;
        let b = if end == n { 1.0 } else { (mass_before + block_mass) / total };
        let g = rho.interval_mean(a, b.min(1.0));
        for &i in &order[start..end] {
            out[i] = g;
        }
        mass_before += block_mass;
        start = end;
    }
    Ok(out)
}

/// Path integral `Γ(y) = ∫ γ(F̂(s)) ds` along the empirical cdf of an equally
/// weighted sample, anchored at the sample minimum.
///
/// `Γ(y + J) − Γ(y)` is the first-order change of `ρ_γ` on the sample when one
/// observation moves from `y` to `y + J`.
#[derive(Debug, Clone)]
pub struct PathIntegral {
    sorted: Vec<f64>,
    slopes: Vec<f64>,
    anchors: Vec<f64>,
}

impl PathIntegral {
    pub fn new(rho: &WeightFunction, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        ensure_finite(values, "sample")?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let nf = n as f64;
        let slopes: Vec<f64> = (0..n)
            .map(|r| rho.interval_mean(r as f64 / nf, (r + 1) as f64 / nf))
            .collect();
        let mut anchors = Vec::with_capacity(n);
        let mut acc = 0.0;
        anchors.push(0.0);
        for i in 1..n {
            acc += slopes[i.min(n - 1)] * (sorted[i] - sorted[i - 1]);
            anchors.push(acc);
        }
        Ok(Self {
            sorted,
            slopes,
            anchors,
        })
    }

    #[must_use]
    pub fn eval(&self, y: f64) -> f64 {
        let n = self.sorted.len();
        if y < self.sorted[0] {
            return self.slopes[0] * (y - self.sorted[0]);
        }
        let i = self.sorted.partition_point(|&s| s <= y) - 1;
        self.anchors[i] + self.slopes[(i + 1).min(n - 1)] * (y - self.sorted[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn es(level: f64) -> WeightFunction {
        WeightFunction::expected_shortfall(level).unwrap()
    }

    #[test]
    fn quantile_examples() {
        let d = EmpiricalDistribution::new(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(quantile(&d, 0.5).unwrap(), 2.0);
        let d = EmpiricalDistribution::weighted(&[0.0, 10.0], &[0.9, 0.1]).unwrap();
        assert_eq!(quantile(&d, 0.95).unwrap(), 10.0);
        assert_eq!(quantile(&d, 0.9).unwrap(), 0.0);
        assert!(quantile(&d, 1.0).is_err());
    }

    #[test]
    fn empty_and_nan_inputs_are_rejected() {
        assert!(EmpiricalDistribution::new(&[]).is_err());
        assert!(EmpiricalDistribution::new(&[1.0, f64::NAN]).is_err());
        assert!(rank_weights(&es(0.5), &[f64::INFINITY], None).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let grid: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = EmpiricalDistribution::new(&grid).unwrap();
        assert!((evaluate(&es(0.95), &d).unwrap() - 98.0).abs() < 1e-10);
        assert!((evaluate(&WeightFunction::expected_value(), &d).unwrap() - 50.5).abs() < 1e-12);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        let d = EmpiricalDistribution::new(&ten).unwrap();
        assert!((evaluate(&es(0.9), &d).unwrap() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn decomposition_examples() {
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        let d = EmpiricalDistribution::new(&ten).unwrap();
        let r = decompose(&es(0.9), &d).unwrap();
        assert!((r.total - 10.0).abs() < 1e-10);
        assert!((r.expectation - 5.5).abs() < 1e-12);
        assert!((r.margin - 4.5).abs() < 1e-10);
        let r = decompose(&WeightFunction::expected_value(), &d).unwrap();
        assert!(r.margin.abs() < 1e-12);
        let r = decompose(&es(0.0), &d).unwrap();
        assert!((r.total - r.expectation).abs() < 1e-12 && r.margin.abs() < 1e-12);
    }

    #[test]
    fn weight_values_follow_their_definitions() {
        let w = es(0.8);
        assert_eq!(w.value(0.79), 0.0);
        assert!((w.value(0.8) - 5.0).abs() < 1e-12);
        assert_eq!(WeightFunction::expected_value().value(0.3), 1.0);
        let t = WeightFunction::tabulated(vec![(0.25, 0.0), (0.75, 2.0)], "ramp").unwrap();
        assert_eq!(t.value(0.1), 0.0);
        assert!((t.value(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(t.value(0.9), 2.0);
        assert!((t.total_mass() - (0.5 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn tabulated_validation() {
        assert!(WeightFunction::tabulated(vec![], "x").is_err());
        assert!(WeightFunction::tabulated(vec![(0.0, 1.0)], "x").is_err());
        assert!(WeightFunction::tabulated(vec![(0.5, 1.0), (0.4, 1.0)], "x").is_err());
        assert!(WeightFunction::tabulated(vec![(0.5, f64::NAN)], "x").is_err());
    }

    #[test]
    fn parse_measures() {
        assert_eq!(WeightFunction::parse("ev").unwrap(), WeightFunction::expected_value());
        assert_eq!(WeightFunction::parse("es:0.9").unwrap().kind, es(0.9).kind);
        assert!(WeightFunction::parse("es:1.0").is_err());
        assert!(WeightFunction::parse("var").is_err());
    }

    #[test]
    fn normal_score_moment_of_tabulated_matches_es_limit() {
        // A steep ramp approximates ES at 0.9.
        let t = WeightFunction::tabulated(vec![(0.9 - 1e-7, 0.0), (0.9 + 1e-7, 10.0)], "ramp").unwrap();
        assert!((t.normal_score_moment() - 1.754_983_319_324_868_3).abs() < 1e-5);
        assert!((es(0.9).normal_score_moment() - 1.754_983_319_324_868_3).abs() < 1e-12);
    }

    #[test]
    fn rank_weights_reproduce_evaluate_with_ties() {
        let ys = [3.0, 1.0, 2.0, 2.0, 5.0, 2.0, 4.0];
        let w = es(0.6);
        let g = rank_weights(&w, &ys, None).unwrap();
        let direct: f64 = ys.iter().zip(&g).map(|(y, g)| y * g).sum::<f64>() / ys.len() as f64;
        let d = EmpiricalDistribution::new(&ys).unwrap();
        assert!((direct - evaluate(&w, &d).unwrap()).abs() < 1e-12);
        assert_eq!(g[2], g[3]);
        assert_eq!(g[3], g[5]);
    }

    #[test]
    fn path_integral_is_identity_for_expected_value() {
        let ys = [0.3, -1.0, 2.5, 0.7];
        let p = PathIntegral::new(&WeightFunction::expected_value(), &ys).unwrap();
        for (a, b) in [(-3.0, 1.0), (0.2, 0.9), (2.0, 7.0)] {
            assert!((p.eval(b) - p.eval(a) - (b - a)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn positive_homogeneity_and_translation(
            ys in proptest::collection::vec(-50.0f64..50.0, 1..60),
            a in 0.0f64..10.0,
            b in -20.0f64..20.0,
            level in 0.0f64..0.99,
        ) {
            let w = es(level);
            let base = evaluate(&w, &EmpiricalDistribution::new(&ys).unwrap()).unwrap();
            let scaled: Vec<f64> = ys.iter().map(|y| a * y).collect();
            let shifted: Vec<f64> = ys.iter().map(|y| y + b).collect();
            let s = evaluate(&w, &EmpiricalDistribution::new(&scaled).unwrap()).unwrap();
            let t = evaluate(&w, &EmpiricalDistribution::new(&shifted).unwrap()).unwrap();
            let scale = 1.0 + base.abs() * a.max(1.0) + b.abs();
            prop_assert!((s - a * base).abs() <= 1e-10 * scale);
            prop_assert!((t - base - b).abs() <= 1e-10 * scale);
        }

        #[test]
        fn decomposition_adds_up(
            ys in proptest::collection::vec(-1e3f64..1e3, 1..80),
            ws in proptest::collection::vec(0.01f64..1.0, 80),
            level in 0.0f64..0.995,
        ) {
            let d = EmpiricalDistribution::weighted(&ys, &ws[..ys.len()]).unwrap();
            let r = decompose(&es(level), &d).unwrap();
            let scale = r.total.abs().max(1.0);
            prop_assert!((r.total - r.expectation - r.margin).abs() <= 1e-10 * scale);
            let ev = evaluate(&WeightFunction::expected_value(), &d).unwrap();
            prop_assert!((ev - d.mean()).abs() <= 1e-12 * d.mean().abs().max(1.0));
        }

        #[test]
        fn quantile_is_left_continuous_and_monotone(
            ys in proptest::collection::vec(-10.0f64..10.0, 1..30),
            ws in proptest::collection::vec(0.0f64..1.0, 30),
        ) {
            let mut w = ws[..ys.len()].to_vec();
            w[0] += 0.1;
            let d = EmpiricalDistribution::weighted(&ys, &w).unwrap();
            let mut last = f64::NEG_INFINITY;
            for k in 1..400 {
                let u = k as f64 / 400.0;
                let q = quantile(&d, u).unwrap();
                prop_assert!(q >= last);
                prop_assert!(d.cdf(q) >= u - 1e-12);
                last = q;
            }
        }
    }
}
