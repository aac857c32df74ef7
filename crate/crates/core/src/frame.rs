//! Rotations between the stator (`αβ`), rotor (`dq`) and controller
//! (`γδ`) frames.
//!
//! `x_αβ = M_θ x_dq`, `x_αβ = M_θc x_γδ` and `x_γδ = M_(θ-θc) x_dq`,
//! with `M_μ` the counter-clockwise rotation by `μ`.

use std::f64::consts::{PI, TAU};

use crate::vec2::{Mat2, Vec2};

/// Rotation matrix `M_μ`.
pub fn rotation(mu: f64) -> Mat2 {
    let (s, c) = mu.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Skew matrix `K`; `dM_μ/dμ = K M_μ = M_μ K`.
pub const SKEW: Mat2 = Mat2::new(0.0, -1.0, 1.0, 0.0);

/// Returns `M_μ v`.
pub fn rotate(v: Vec2, mu: f64) -> Vec2 {
    let (s, c) = mu.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

pub fn dq_to_alpha_beta(v: Vec2, theta: f64) -> Vec2 {
    rotate(v, theta)
}

pub fn alpha_beta_to_dq(v: Vec2, theta: f64) -> Vec2 {
    rotate(v, -theta)
}

/// `x_γδ = M_(θ-θc) x_dq`.
pub fn dq_to_gamma_delta(v: Vec2, theta: f64, theta_c: f64) -> Vec2 {
    rotate(v, theta - theta_c)
}

pub fn gamma_delta_to_dq(v: Vec2, theta: f64, theta_c: f64) -> Vec2 {
    rotate(v, theta_c - theta)
}

/// Wraps an angle to `]-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Signed difference `a - b`, wrapped to `]-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn() {
        let v = rotate(Vec2::new(1.0, 0.0), FRAC_PI_2);
        assert!(v.x.abs() < 1e-16);
        assert_relative_eq!(v.y, 1.0);
    }

    #[test]
    fn zero_angle_is_identity() {
        let v = Vec2::new(0.3, -1.7);
        assert_eq!(rotate(v, 0.0), v);
    }

    #[test]
    fn derivative_matches_skew_product() {
        // d/dμ M_μ v = K M_μ v, by central differences.
        let v = Vec2::new(0.8, -0.4);
        let h = 1e-6;
        for k in 0..50 {
            let mu = -3.0 + 0.12 * k as f64;
            let fd = (rotate(v, mu + h) - rotate(v, mu - h)) * (0.5 / h);
            let exact = SKEW.mul_vec(rotate(v, mu));
            assert!((fd - exact).norm() < 1e-9, "mu={mu}");
            let commuted = rotation(mu).mul_vec(SKEW.mul_vec(v));
            assert!((commuted - exact).norm() < 1e-15);
        }
    }

    #[test]
    fn frame_round_trips() {
        let v = Vec2::new(1.2, 3.4);
        let back = gamma_delta_to_dq(dq_to_gamma_delta(v, 0.7, -2.1), 0.7, -2.1);
        assert!((back - v).norm() < 1e-14);
        let back = alpha_beta_to_dq(dq_to_alpha_beta(v, 5.0), 5.0);
        assert!((back - v).norm() < 1e-14);
    }

    #[test]
    fn wrapping_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(angle_diff(0.1, TAU - 0.1), 0.2, epsilon = 1e-12);
    }
}
