//! Energy-based saturation model of the PMSM.
//!
//! The stator current derives from a magnetic energy `H(φd, φq)` as
//! `i = ∇H(φ)`. `H` is the linear quadratic form plus the third- and
//! fourth-order terms allowed by the `φq → -φq` symmetry of the machine:
//!
//! ```text
//! H = φd²/2Ld + φq²/2Lq + a30 φd³ + a12 φd φq² + a40 φd⁴ + a22 φd² φq² + a04 φq⁴
//! ```
//!
//! With all five `a` coefficients zero the model is the usual linear one.
//! The cubic/quartic terms are small corrections, so the model is only
//! trusted where the differential admittance stays positive-definite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::rotation;
use crate::vec2::{CurrentDQ, FluxDQ, Mat2, SymMatrix2, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("flux inversion did not converge for current ({}, {}) A after {iterations} iterations; operating point outside model validity", current.x, current.y)]
    NotConverged { current: CurrentDQ, iterations: usize },
    #[error("admittance not positive-definite at current ({}, {}) A; operating point outside model validity", current.x, current.y)]
    OutsideValidity { current: CurrentDQ },
    #[error("magnetic Hessian not positive-definite at flux ({}, {}) Wb", flux.x, flux.y)]
    SingularFlux { flux: FluxDQ },
    #[error("invalid motor parameters: {0}")]
    InvalidParams(String),
}

/// Electrical, mechanical and magnetic parameters of one machine.
///
/// Saturation coefficients are stored in SI units (each `a·φ^k` term has
/// ampere dimension once differentiated). Use
/// [`MotorParams::with_normalized_saturation`] to enter the dimensionless
/// products usually tabulated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorParams {
    /// Stator resistance (Ω).
    pub r: f64,
    /// Pole pairs.
    pub n: u32,
    /// Permanent-magnet flux, peak (Wb).
    pub lambda: f64,
    /// Unsaturated d-axis inductance (H).
    pub ld: f64,
    /// Unsaturated q-axis inductance (H).
    pub lq: f64,
    pub a30: f64,
    pub a12: f64,
    pub a40: f64,
    pub a22: f64,
    pub a04: f64,
    /// Rotor inertia (kg·m²).
    pub j: f64,
    /// Rated current, peak (A). Only used for normalization and sweeps.
    pub i_n: f64,
    /// Rated mechanical speed (rpm), when known.
    pub rated_rpm: Option<f64>,
}

/// Dimensionless saturation products:
/// `a30·Ld²·In`, `a12·Ld·Lq·In`, `a40·Ld³·In²`, `a22·Ld·Lq²·In²`, `a04·Lq³·In²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSaturation {
    pub a30: f64,
    pub a12: f64,
    pub a40: f64,
    pub a22: f64,
    pub a04: f64,
}

impl NormalizedSaturation {
    pub fn as_array(&self) -> [f64; 5] {
        [self.a30, self.a12, self.a40, self.a22, self.a04]
    }
}

pub const SATURATION_NAMES: [&str; 5] = ["a30", "a12", "a40", "a22", "a04"];

impl MotorParams {
    /// Linear machine (all saturation coefficients zero).
    pub fn linear(r: f64, n: u32, lambda: f64, ld: f64, lq: f64, j: f64, i_n: f64) -> Self {
        Self {
            r,
            n,
            lambda,
            ld,
            lq,
            a30: 0.0,
            a12: 0.0,
            a40: 0.0,
            a22: 0.0,
            a04: 0.0,
            j,
            i_n,
            rated_rpm: None,
        }
    }

    /// 750 W interior-magnet test motor.
    pub fn ipm_750w() -> Self {
        let mut p = Self::linear(1.52, 3, 0.196, 9.15e-3, 13.58e-3, 5e-4, 4.51).with_normalized_saturation(
            NormalizedSaturation {
                a30: 0.039,
                a12: 0.053,
                a40: 0.0051,
                a22: 0.0171,
                a04: 0.0060,
            },
        );
        p.rated_rpm = Some(1800.0);
        p
    }

    /// 1500 W surface-magnet test motor.
    pub fn spm_1500w() -> Self {
        let mut p = Self::linear(2.1, 5, 0.155, 7.86e-3, 8.18e-3, 1e-3, 5.19).with_normalized_saturation(
            NormalizedSaturation {
                a30: 0.056,
                a12: 0.055,
                a40: 0.0164,
                a22: 0.027,
                a04: 0.0067,
            },
        );
        p.rated_rpm = Some(3000.0);
        p
    }

    /// Replaces the saturation coefficients from their normalized products.
    pub fn with_normalized_saturation(mut self, s: NormalizedSaturation) -> Self {
        let (ld, lq, i_n) = (self.ld, self.lq, self.i_n);
        self.a30 = s.a30 / (ld * ld * i_n);
        self.a12 = s.a12 / (ld * lq * i_n);
        self.a40 = s.a40 / (ld.powi(3) * i_n * i_n);
        self.a22 = s.a22 / (ld * lq * lq * i_n * i_n);
        self.a04 = s.a04 / (lq.powi(3) * i_n * i_n);
        self
    }

    pub fn normalized_saturation(&self) -> NormalizedSaturation {
        let (ld, lq, i_n) = (self.ld, self.lq, self.i_n);
        NormalizedSaturation {
            a30: self.a30 * ld * ld * i_n,
            a12: self.a12 * ld * lq * i_n,
            a40: self.a40 * ld.powi(3) * i_n * i_n,
            a22: self.a22 * ld * lq * lq * i_n * i_n,
            a04: self.a04 * lq.powi(3) * i_n * i_n,
        }
    }

    /// Same machine with every saturation coefficient set to zero.
    pub fn without_saturation(&self) -> Self {
        Self {
            a30: 0.0,
            a12: 0.0,
            a40: 0.0,
            a22: 0.0,
            a04: 0.0,
            ..*self
        }
    }

    /// Same machine with every saturation coefficient multiplied by `s`.
    pub fn with_saturation_scaled(&self, s: f64) -> Self {
        Self {
            a30: self.a30 * s,
            a12: self.a12 * s,
            a40: self.a40 * s,
            a22: self.a22 * s,
            a04: self.a04 * s,
            ..*self
        }
    }

    pub fn is_linear(&self) -> bool {
        [self.a30, self.a12, self.a40, self.a22, self.a04]
            .iter()
            .all(|a| *a == 0.0)
    }

    /// Permanent-magnet flux vector `φm = (λ, 0)`.
    pub fn magnet_flux(&self) -> Vec2 {
        Vec2::new(self.lambda, 0.0)
    }

    /// Torque at rated current on the q axis, ignoring reluctance (N·m).
    pub fn rated_torque(&self) -> f64 {
        1.5 * self.n as f64 * self.lambda * self.i_n
    }

    /// Rated electrical speed (rad/s), when the rated rpm is known.
    pub fn rated_electrical_speed(&self) -> Option<f64> {
        self.rated_rpm
            .map(|rpm| rpm / 60.0 * std::f64::consts::TAU * self.n as f64)
    }

    pub fn validate(&self) -> Result<(), MagneticsError> {
        let bad = |msg: &str| Err(MagneticsError::InvalidParams(msg.to_string()));
        let all = [
            self.r,
            self.lambda,
            self.ld,
            self.lq,
            self.a30,
            self.a12,
            self.a40,
            self.a22,
            self.a04,
            self.j,
            self.i_n,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        if self.r <= 0.0 {
            return bad("R must be > 0");
        }
        if self.ld <= 0.0 || self.lq <= 0.0 {
            return bad("Ld and Lq must be > 0");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if self.n < 1 {
            return bad("n must be >= 1");
        }
        if self.j <= 0.0 {
            return bad("J must be > 0");
        }
        if self.i_n <= 0.0 {
            return bad("In must be > 0");
        }
        Ok(())
    }
}

/// Magnetic energy `H(φ)`; `H(0, 0) = 0`.
pub fn energy(phi: FluxDQ, p: &MotorParams) -> f64 {
    let (d, q) = (phi.x, phi.y);
    let (d2, q2) = (d * d, q * q);
    d2 / (2.0 * p.ld)
        + q2 / (2.0 * p.lq)
        + p.a30 * d2 * d
        + p.a12 * d * q2
        + p.a40 * d2 * d2
        + p.a22 * d2 * q2
        + p.a04 * q2 * q2
}

/// Flux-current magnetization curves `i = ∇H(φ)`.
pub fn current_from_flux(phi: FluxDQ, p: &MotorParams) -> CurrentDQ {
    let (d, q) = (phi.x, phi.y);
    let (d2, q2) = (d * d, q * q);
    Vec2::new(
        d / p.ld + 3.0 * p.a30 * d2 + p.a12 * q2 + 4.0 * p.a40 * d2 * d + 2.0 * p.a22 * d * q2,
        q / p.lq + 2.0 * p.a12 * d * q + 2.0 * p.a22 * d2 * q + 4.0 * p.a04 * q2 * q,
    )
}

/// Hessian of `H` at `φ`, i.e. the exact Jacobian `DI(φ)` of
/// [`current_from_flux`].
pub fn hessian(phi: FluxDQ, p: &MotorParams) -> SymMatrix2 {
    let (d, q) = (phi.x, phi.y);
    SymMatrix2::new(
        1.0 / p.ld + 6.0 * p.a30 * d + 12.0 * p.a40 * d * d + 2.0 * p.a22 * q * q,
        2.0 * p.a12 * q + 4.0 * p.a22 * d * q,
        1.0 / p.lq + 2.0 * p.a12 * d + 2.0 * p.a22 * d * d + 12.0 * p.a04 * q * q,
    )
}

/// Inverse magnetization curves to first order in the saturation
/// coefficients.
pub fn flux_from_current_approx(i: CurrentDQ, p: &MotorParams) -> FluxDQ {
    let (d, q) = (i.x, i.y);
    let (ld, lq) = (p.ld, p.lq);
    Vec2::new(
        ld * (d
            - 3.0 * p.a30 * ld * ld * d * d
            - p.a12 * lq * lq * q * q
            - 4.0 * p.a40 * ld.powi(3) * d.powi(3)
            - 2.0 * p.a22 * ld * lq * lq * d * q * q),
        lq * (q
            - 2.0 * p.a12 * ld * lq * d * q
            - 2.0 * p.a22 * ld * ld * lq * d * d * q
            - 4.0 * p.a04 * lq.powi(3) * q.powi(3)),
    )
}

/// Default tolerance of [`flux_from_current_exact`] (A).
pub const DEFAULT_INVERSION_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERATIONS: usize = 50;

/// Exact inverse of the magnetization curves.
///
/// Damped Newton iteration on `current_from_flux(φ) - i`, seeded with the
/// first-order inverse and using the Hessian of `H` as Jacobian. Returns
/// `φ` whose current matches `i` to `tol` in every component.
pub fn flux_from_current_exact(i: CurrentDQ, p: &MotorParams, tol: f64) -> Result<FluxDQ, MagneticsError> {
    if p.is_linear() {
        return Ok(Vec2::new(p.ld * i.x, p.lq * i.y));
    }
    let fail = |iterations| MagneticsError::NotConverged { current: i, iterations };
    let mut phi = flux_from_current_approx(i, p);
    let mut res = current_from_flux(phi, p) - i;
    if !res.is_finite() {
        return Err(fail(0));
    }
    for it in 0..MAX_NEWTON_ITERATIONS {
        if res.max_abs() <= tol {
            return Ok(phi);
        }
        let jac = hessian(phi, p);
        if !jac.is_positive_definite() {
            return Err(fail(it));
        }
        let step = jac.solve(res).ok_or_else(|| fail(it))?;
        // Halve the step until the residual decreases.
        let mut scale = 1.0;
        loop {
            let candidate = phi - step * scale;
            let r = current_from_flux(candidate, p) - i;
            if r.is_finite() && r.norm() < res.norm() {
                phi = candidate;
                res = r;
                break;
            }
            scale *= 0.5;
            if scale < 1e-6 {
                return Err(fail(it));
            }
        }
    }
    if res.max_abs() <= tol {
        Ok(phi)
    } else {
        Err(fail(MAX_NEWTON_ITERATIONS))
    }
}

/// Closed-form differential admittance `G(i) = DI(I⁻¹(i))`, first order in
/// the saturation coefficients.
pub fn admittance(i: CurrentDQ, p: &MotorParams) -> SymMatrix2 {
    let (d, q) = (i.x, i.y);
    let (ld, lq) = (p.ld, p.lq);
    SymMatrix2::new(
        1.0 / ld + 6.0 * p.a30 * ld * d + 12.0 * p.a40 * ld * ld * d * d + 2.0 * p.a22 * lq * lq * q * q,
        2.0 * p.a12 * lq * q + 4.0 * p.a22 * ld * d * lq * q,
        1.0 / lq + 2.0 * p.a12 * ld * d + 2.0 * p.a22 * ld * ld * d * d + 12.0 * p.a04 * lq * lq * q * q,
    )
}

/// Differential admittance evaluated exactly: the Hessian of `H` at the
/// exact inverse flux of `i`.
pub fn admittance_exact(i: CurrentDQ, p: &MotorParams) -> Result<SymMatrix2, MagneticsError> {
    let phi = flux_from_current_exact(i, p, DEFAULT_INVERSION_TOL)?;
    let g = hessian(phi, p);
    if !g.is_positive_definite() {
        return Err(MagneticsError::OutsideValidity { current: i });
    }
    Ok(g)
}

/// How the differential admittance is evaluated from a current.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmittanceModel {
    /// Closed-form first-order entries ([`admittance`]).
    FirstOrder,
    /// Hessian at the exact inverse flux ([`admittance_exact`]).
    #[default]
    Exact,
}

impl AdmittanceModel {
    /// Admittance at `i`, failing outside the validity region.
    pub fn eval(self, i: CurrentDQ, p: &MotorParams) -> Result<SymMatrix2, MagneticsError> {
        match self {
            AdmittanceModel::FirstOrder => {
                let g = admittance(i, p);
                if g.is_positive_definite() {
                    Ok(g)
                } else {
                    Err(MagneticsError::OutsideValidity { current: i })
                }
            }
            AdmittanceModel::Exact => admittance_exact(i, p),
        }
    }
}

/// Incremental inductance matrix, the inverse of [`admittance`].
pub fn inductance(i: CurrentDQ, p: &MotorParams) -> Result<SymMatrix2, MagneticsError> {
    let g = admittance(i, p);
    if !g.is_positive_definite() {
        return Err(MagneticsError::OutsideValidity { current: i });
    }
    g.inverse().ok_or(MagneticsError::OutsideValidity { current: i })
}

/// Saliency matrix `S(μ, ī) = M_μ G(M_μᵀ ī) M_μᵀ` with the closed-form
/// admittance.
pub fn saliency_matrix(mu: f64, i_bar: CurrentDQ, p: &MotorParams) -> Result<Mat2, MagneticsError> {
    saliency_matrix_with(AdmittanceModel::FirstOrder, mu, i_bar, p)
}

/// Saliency matrix with an explicit admittance model.
pub fn saliency_matrix_with(
    model: AdmittanceModel,
    mu: f64,
    i_bar: CurrentDQ,
    p: &MotorParams,
) -> Result<Mat2, MagneticsError> {
    let rot = rotation(mu);
    let rot_t = rot.transpose();
    let g = model.eval(rot_t.mul_vec(i_bar), p)?;
    Ok(rot.mul_mat(&g.to_mat2()).mul_mat(&rot_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn fd_gradient(phi: FluxDQ, p: &MotorParams) -> Vec2 {
        let h = 1e-6 * phi.norm().max(1e-3);
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        Vec2::new(
            (energy(phi + ex, p) - energy(phi - ex, p)) / (2.0 * h),
            (energy(phi + ey, p) - energy(phi - ey, p)) / (2.0 * h),
        )
    }

    fn fd_jacobian(phi: FluxDQ, p: &MotorParams) -> Mat2 {
        let h = 1e-7;
        let cx =
            (current_from_flux(phi + Vec2::new(h, 0.0), p) - current_from_flux(phi - Vec2::new(h, 0.0), p)) * (0.5 / h);
        let cy =
            (current_from_flux(phi + Vec2::new(0.0, h), p) - current_from_flux(phi - Vec2::new(0.0, h), p)) * (0.5 / h);
        Mat2::new(cx.x, cy.x, cx.y, cy.y)
    }

    #[test]
    fn energy_vanishes_at_origin() {
        assert_eq!(energy(Vec2::ZERO, &MotorParams::ipm_750w()), 0.0);
        assert_eq!(energy(Vec2::ZERO, &MotorParams::spm_1500w()), 0.0);
    }

    #[test]
    fn linear_energy_unit_inductances() {
        let p = MotorParams::linear(1.0, 1, 0.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(energy(Vec2::new(1.0, 1.0), &p), 1.0);
    }

    #[test]
    fn linear_limit_of_maps() {
        let p = MotorParams::ipm_750w().without_saturation();
        let phi = Vec2::new(0.03, -0.02);
        let i = current_from_flux(phi, &p);
        assert_relative_eq!(i.x, phi.x / p.ld, max_relative = 1e-15);
        assert_relative_eq!(i.y, phi.y / p.lq, max_relative = 1e-15);
        let i = Vec2::new(2.0, -3.0);
        let approx = flux_from_current_approx(i, &p);
        assert_eq!(approx, Vec2::new(p.ld * i.x, p.lq * i.y));
        assert_eq!(flux_from_current_exact(i, &p, 1e-12).unwrap(), approx);
        let g = admittance(i, &p);
        assert_eq!(g, SymMatrix2::diag(1.0 / p.ld, 1.0 / p.lq));
        let l = inductance(i, &p).unwrap();
        assert_relative_eq!(l.dd, p.ld, max_relative = 1e-15);
        assert_relative_eq!(l.qq, p.lq, max_relative = 1e-15);
        assert_eq!(l.dq, 0.0);
    }

    #[test]
    fn zero_current_maps_to_zero_flux() {
        let p = MotorParams::ipm_750w();
        assert_eq!(current_from_flux(Vec2::ZERO, &p), Vec2::ZERO);
        assert_eq!(flux_from_current_approx(Vec2::ZERO, &p), Vec2::ZERO);
        assert_eq!(flux_from_current_exact(Vec2::ZERO, &p, 1e-10).unwrap(), Vec2::ZERO);
    }

    #[test]
    fn closed_form_current_matches_energy_gradient_at_rated_flux() {
        let p = MotorParams::ipm_750w();
        let phi = Vec2::new(p.ld * p.i_n, 0.0);
        let fd = fd_gradient(phi, &p);
        let i = current_from_flux(phi, &p);
        assert!((i - fd).norm() / fd.norm() < 1e-6);
    }

    #[test]
    fn admittance_at_origin_is_unsaturated() {
        let p = MotorParams::ipm_750w();
        let g = admittance(Vec2::ZERO, &p);
        assert_relative_eq!(g.dd, 1.0 / 9.15e-3, max_relative = 1e-12);
        assert_relative_eq!(g.qq, 1.0 / 13.58e-3, max_relative = 1e-12);
        assert_eq!(g.dq, 0.0);
    }

    #[test]
    fn normalized_round_trip() {
        let p = MotorParams::ipm_750w();
        let s = p.normalized_saturation();
        assert_relative_eq!(s.a30, 0.039, max_relative = 1e-12);
        assert_relative_eq!(s.a12, 0.053, max_relative = 1e-12);
        assert_relative_eq!(s.a40, 0.0051, max_relative = 1e-12);
        assert_relative_eq!(s.a22, 0.0171, max_relative = 1e-12);
        assert_relative_eq!(s.a04, 0.0060, max_relative = 1e-12);
    }

    #[test]
    fn rated_torque_matches_nameplate() {
        assert_relative_eq!(MotorParams::ipm_750w().rated_torque(), 3.98, max_relative = 2e-3);
        assert_relative_eq!(MotorParams::spm_1500w().rated_torque(), 6.06, max_relative = 6e-3);
    }

    #[test]
    fn admittance_times_inductance_is_identity() {
        let p = MotorParams::ipm_750w();
        for k in 0..100 {
            let i = Vec2::new(
                p.i_n * (2.0 * ((k * 37 % 100) as f64 / 100.0) - 1.0),
                p.i_n * (2.0 * ((k * 61 % 100) as f64 / 100.0) - 1.0),
            );
            let g = admittance(i, &p).to_mat2();
            let l = inductance(i, &p).unwrap().to_mat2();
            assert!(g.mul_mat(&l).sub(&Mat2::IDENTITY).max_abs() < 1e-12);
        }
    }

    #[test]
    fn inductance_determinant_positive_on_validity_box() {
        for p in [MotorParams::ipm_750w(), MotorParams::spm_1500w()] {
            for a in -20..=20 {
                for b in -20..=20 {
                    let i = Vec2::new(a as f64 * 0.1 * p.i_n, b as f64 * 0.1 * p.i_n);
                    let l = inductance(i, &p).unwrap();
                    assert!(l.det() > 0.0);
                }
            }
        }
    }

    #[test]
    fn indefinite_admittance_is_rejected() {
        // Cubic-only d-axis saturation loses convexity for negative i_d.
        let p = MotorParams::ipm_750w().with_normalized_saturation(NormalizedSaturation {
            a30: 0.2,
            a12: 0.0,
            a40: 0.0,
            a22: 0.0,
            a04: 0.0,
        });
        let i = Vec2::new(-2.0 * p.i_n, 0.0);
        assert!(matches!(inductance(i, &p), Err(MagneticsError::OutsideValidity { .. })));
        assert!(admittance_exact(i, &p).is_err());
    }

    #[test]
    fn saliency_frame_identity() {
        let p = MotorParams::spm_1500w();
        let i = Vec2::new(3.0, -4.0);
        let s = saliency_matrix(0.0, i, &p).unwrap();
        assert_eq!(s, admittance(i, &p).to_mat2());
        let s0 = saliency_matrix(0.0, Vec2::ZERO, &p).unwrap();
        assert_relative_eq!(s0.m[0][0], 1.0 / p.ld, max_relative = 1e-15);
        assert_relative_eq!(s0.m[1][1], 1.0 / p.lq, max_relative = 1e-15);
    }

    #[test]
    fn unsaturated_saliency_closed_form() {
        let p = MotorParams::ipm_750w().without_saturation();
        let (ld, lq) = (p.ld, p.lq);
        // Rotating diag(1/Ld, 1/Lq) puts (Lq - Ld)/(Ld + Lq) in front of 2μ.
        let r = (lq - ld) / (ld + lq);
        let k = (ld + lq) / (2.0 * ld * lq);
        for step in 0..72 {
            let mu = -PI + step as f64 * PI / 36.0;
            let s = saliency_matrix(mu, Vec2::new(1.0, 2.0), &p).unwrap();
            let c = Mat2::new(
                k * (1.0 + r * (2.0 * mu).cos()),
                k * r * (2.0 * mu).sin(),
                k * r * (2.0 * mu).sin(),
                k * (1.0 - r * (2.0 * mu).cos()),
            );
            assert!(s.sub(&c).max_abs() < 1e-10 * k);
            let shifted = saliency_matrix(mu + PI, Vec2::new(1.0, 2.0), &p).unwrap();
            let flipped = saliency_matrix(mu, Vec2::new(-1.0, -2.0), &p).unwrap();
            assert!(shifted.sub(&s).max_abs() < 1e-10 * k);
            assert!(flipped.sub(&s).max_abs() < 1e-10 * k);
        }
    }

    #[test]
    fn exact_admittance_matches_fd_jacobian() {
        let p = MotorParams::spm_1500w();
        let i = Vec2::new(1.5 * p.i_n, -1.2 * p.i_n);
        let phi = flux_from_current_exact(i, &p, 1e-12).unwrap();
        let fd = fd_jacobian(phi, &p);
        let g = admittance_exact(i, &p).unwrap().to_mat2();
        assert!(g.sub(&fd).max_abs() / g.max_abs() < 1e-7);
    }

    fn table_params() -> impl Strategy<Value = MotorParams> {
        prop_oneof![Just(MotorParams::ipm_750w()), Just(MotorParams::spm_1500w())]
    }

    proptest! {
        #[test]
        fn gradient_consistency(p in table_params(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let phi = Vec2::new(a * p.ld * p.i_n, b * p.lq * p.i_n);
            prop_assume!(phi.norm() > 1e-4);
            let fd = fd_gradient(phi, &p);
            let i = current_from_flux(phi, &p);
            prop_assert!((i - fd).norm() <= 1e-6 * fd.norm());
        }

        #[test]
        fn symmetry_in_q_flux(p in table_params(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let phi = Vec2::new(a * p.ld * p.i_n, b * p.lq * p.i_n);
            let mirrored = Vec2::new(phi.x, -phi.y);
            prop_assert_eq!(energy(phi, &p), energy(mirrored, &p));
            let i = current_from_flux(phi, &p);
            let im = current_from_flux(mirrored, &p);
            prop_assert_eq!(i.x, im.x);
            prop_assert_eq!(i.y, -im.y);
        }

        #[test]
        fn fd_jacobian_is_symmetric(p in table_params(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let phi = Vec2::new(a * p.ld * p.i_n, b * p.lq * p.i_n);
            let j = fd_jacobian(phi, &p);
            prop_assert!((j.m[0][1] - j.m[1][0]).abs() <= 1e-6 * j.max_abs());
        }

        #[test]
        fn inversion_round_trip(p in table_params(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let i = Vec2::new(a * p.i_n, b * p.i_n);
            let phi = flux_from_current_exact(i, &p, 1e-10).unwrap();
            prop_assert!((current_from_flux(phi, &p) - i).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn first_order_inverse_error_is_quadratic_in_saturation() {
        for base in [MotorParams::ipm_750w(), MotorParams::spm_1500w()] {
            let i = Vec2::new(base.i_n, base.i_n);
            let err = |s: f64| {
                let p = base.with_saturation_scaled(s);
                (flux_from_current_approx(i, &p) - flux_from_current_exact(i, &p, 1e-13).unwrap()).norm()
            };
            let (e1, e2, e4) = (err(1.0), err(0.5), err(0.25));
            for ratio in [e1 / e2, e2 / e4] {
                assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
            }
        }
    }
}
