//! Two-component vectors and 2×2 matrices.
//!
//! Every electrical quantity in the model (flux, current, voltage) is a
//! pair of components in one of three frames: rotor `dq`, controller
//! `γδ` or stator `αβ`. The frame is implied by context; [`Vec2`] only
//! carries the numbers.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

/// Flux linkage (Wb).
pub type FluxDQ = Vec2;
/// Current (A).
pub type CurrentDQ = Vec2;
/// Voltage (V).
pub type Voltage = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Product with the skew matrix `K = [[0, -1], [1, 0]]`.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        rhs * self
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// General 2×2 matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a00: f64, a01: f64, a10: f64, a11: f64) -> Self {
        Self {
            m: [[a00, a01], [a10, a11]],
        }
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn mul_mat(&self, o: &Mat2) -> Mat2 {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}

/// Symmetric 2×2 matrix stored as its three distinct entries.
///
/// Used for the differential admittance `G = DI(I⁻¹(i))` (1/H) and its
/// inverse, the incremental inductance matrix (H). Symmetry holds by
/// representation; positive-definiteness does not and is checked by
/// callers through [`SymMatrix2::is_positive_definite`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix2 {
    pub dd: f64,
    pub dq: f64,
    pub qq: f64,
}

impl SymMatrix2 {
    pub const fn new(dd: f64, dq: f64, qq: f64) -> Self {
        Self { dd, dq, qq }
    }

    pub const fn diag(dd: f64, qq: f64) -> Self {
        Self { dd, dq: 0.0, qq }
    }

    pub fn det(&self) -> f64 {
        self.dd * self.qq - self.dq * self.dq
    }

    pub fn trace(&self) -> f64 {
        self.dd + self.qq
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dd > 0.0 && self.det() > 0.0
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.dd * v.x + self.dq * v.y, self.dq * v.x + self.qq * v.y)
    }

    /// Inverse, or `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<SymMatrix2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(SymMatrix2::new(self.qq / det, -self.dq / det, self.dd / det))
    }

    /// Solves `self · x = rhs`.
    pub fn solve(&self, rhs: Vec2) -> Option<Vec2> {
        self.inverse().map(|inv| inv.mul_vec(rhs))
    }

    pub fn to_mat2(&self) -> Mat2 {
        Mat2::new(self.dd, self.dq, self.dq, self.qq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_is_skew_product() {
        let v = Vec2::new(2.0, -3.0);
        assert_eq!(v.perp(), Vec2::new(3.0, 2.0));
        assert_eq!(v.perp().dot(v), 0.0);
    }

    #[test]
    fn sym_inverse() {
        let a = SymMatrix2::new(4.0, 1.0, 3.0);
        let inv = a.inverse().unwrap();
        let p = a.to_mat2().mul_mat(&inv.to_mat2());
        assert!(p.sub(&Mat2::IDENTITY).max_abs() < 1e-15);
        assert!(SymMatrix2::new(1.0, 2.0, 1.0).inverse().is_some());
        assert!(!SymMatrix2::new(1.0, 2.0, 1.0).is_positive_definite());
        assert!(SymMatrix2::new(1.0, 1.0, 1.0).inverse().is_none());
    }
}
