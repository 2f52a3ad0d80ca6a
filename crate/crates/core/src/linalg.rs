//! Small dense linear algebra: partial-pivot elimination and Cholesky.
//!
//! Matrices are row-major `n × n` slices. Sizes in this crate are tiny (the
//! number of protected attributes, or GLM design widths of a few dozen), so
//! straightforward `O(n³)` routines are all that is needed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Solution of a square system together with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// 1-norm condition number estimate `‖A‖₁ ‖A⁻¹‖₁`.
    pub condition: f64,
}

fn lu_decompose(a: &[f64], n: usize) -> Option<(Vec<f64>, Vec<usize>)> {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, lu[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= 1e-14 * scale {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                lu.swap(col * n + k, pivot_row * n + k);
            }
            perm.swap(col, pivot_row);
        }
        let pivot = lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            lu[r * n + col] = factor;
            for k in col + 1..n {
                lu[r * n + k] -= factor * lu[col * n + k];
            }
        }
    }
    Some((lu, perm))
}

fn lu_solve(lu: &[f64], perm: &[usize], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for r in 0..n {
        for k in 0..r {
            y[r] -= lu[r * n + k] * y[k];
        }
    }
    for r in (0..n).rev() {
        for k in r + 1..n {
            y[r] -= lu[r * n + k] * y[k];
        }
        y[r] /= lu[r * n + r];
    }
    y
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot vanishes relative to the matrix scale.
#[must_use]
pub fn solve_partial_pivot(a: &[f64], b: &[f64]) -> Option<Solution> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let (lu, perm) = lu_decompose(a, n)?;
    let x = lu_solve(&lu, &perm, n, b);
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let norm_a = (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let mut norm_inv = 0.0_f64;
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let col = lu_solve(&lu, &perm, n, &e);
        norm_inv = norm_inv.max(col.iter().map(|v| v.abs()).sum());
    }
    Some(Solution {
        x,
        condition: norm_a * norm_inv,
    })
}

/// Solves the symmetric positive definite system `A x = b` by Cholesky.
///
/// Fails with [`Error::SingularDesign`] when `A` is not numerically
/// positive definite.
pub fn cholesky_solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0_f64, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 1e-12 * max_diag) {
                    return Err(Error::SingularDesign);
                }
                l[i * n + i] = crate::special::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Ok(y)
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// Zero pivots (rank deficiency) produce zero columns instead of failing,
/// which is what sampling from degenerate Gaussians needs.
#[must_use]
pub fn cholesky_factor_psd(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = if s > 0.0 { crate::special::sqrt(s) } else { 0.0 };
            } else if l[j * n + j] > 0.0 {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoting_solves_zero_leading_entry() {
        let a = [0.0, 2.0, 1.0, 1.0];
        let s = solve_partial_pivot(&a, &[4.0, 3.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14 && (s.x[1] - 2.0).abs() < 1e-14);
        assert!(s.condition.is_finite());
    }

    #[test]
    fn singular_system_is_rejected() {
        assert!(solve_partial_pivot(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0]).is_none());
        assert_eq!(
            cholesky_solve(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0]),
            Err(Error::SingularDesign)
        );
    }

    #[test]
    fn cholesky_matches_elimination() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let b = [1.0, -2.0, 0.5];
        let x1 = cholesky_solve(&a, &b).unwrap();
        let x2 = solve_partial_pivot(&a, &b).unwrap().x;
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-13);
        }
    }
}
