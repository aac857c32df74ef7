//! Small dense linear least squares.
//!
//! Solved by Householder QR on column-scaled data; the normal equations are
//! solved alongside as a cross-check.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LstsqError {
    #[error("design matrix has {rows} rows and {cols} columns; need rows >= cols >= 1")]
    Shape { rows: usize, cols: usize },
    #[error("right-hand side has {got} entries, expected {expected}")]
    RhsLength { expected: usize, got: usize },
    #[error("rank-deficient design matrix (column {column} is dependent on the others)")]
    RankDeficient { column: usize },
    #[error("non-finite value in the data")]
    NonFinite,
}

/// Relative size of the smallest admissible `R` diagonal after column scaling.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    /// `‖A x − b‖₂`.
    pub residual_norm: f64,
    /// Coefficients from the normal equations.
    pub normal_coef: Vec<f64>,
    /// `max_k |x_qr − x_ne| / max_k |x_qr|`.
    pub disagreement: f64,
}

/// Minimizes `‖A x − b‖₂` for `A` given as rows.
pub fn lstsq(rows: &[Vec<f64>], b: &[f64]) -> Result<LstsqSolution, LstsqError> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if n == 0 || m < n || rows.iter().any(|r| r.len() != n) {
        return Err(LstsqError::Shape { rows: m, cols: n });
    }
    if b.len() != m {
        return Err(LstsqError::RhsLength {
            expected: m,
            got: b.len(),
        });
    }
    if rows.iter().flatten().chain(b).any(|v| !v.is_finite()) {
        return Err(LstsqError::NonFinite);
    }
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let rhs = DVector::from_column_slice(b);
    // Unit-norm columns make the rank test scale-free.
    let scale: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    if let Some(column) = scale.iter().position(|s| *s == 0.0) {
        return Err(LstsqError::RankDeficient { column });
    }
    let mut a_s = a.clone();
    for (j, s) in scale.iter().enumerate() {
        a_s.column_mut(j).scale_mut(1.0 / s);
    }

    let qr = a_s.clone().qr();
    let r = qr.r();
    let r_max = (0..n).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if let Some(column) = (0..n).find(|&k| r[(k, k)].abs() <= RANK_TOL * r_max) {
        return Err(LstsqError::RankDeficient { column });
    }
    let qtb = qr.q().transpose() * &rhs;
    let y = r
        .solve_upper_triangular(&qtb)
        .ok_or(LstsqError::RankDeficient { column: n - 1 })?;
    let coef: Vec<f64> = (0..n).map(|j| y[j] / scale[j]).collect();

    let ata = a_s.transpose() * &a_s;
    let atb = a_s.transpose() * &rhs;
    let y_ne = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .ok_or(LstsqError::RankDeficient { column: n - 1 })?;
    let normal_coef: Vec<f64> = (0..n).map(|j| y_ne[j] / scale[j]).collect();

    let x = DVector::from_column_slice(&coef);
    let residual_norm = (&a * x - &rhs).norm();
    let x_max = coef.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let diff = coef
        .iter()
        .zip(&normal_coef)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let disagreement = if x_max > 0.0 { diff / x_max } else { diff };
    Ok(LstsqSolution {
        coef,
        residual_norm,
        normal_coef,
        disagreement,
    })
}
