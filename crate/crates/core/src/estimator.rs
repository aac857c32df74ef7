//! Rotor angle from demodulated currents.
//!
//! `θ̂ = θ_c + argmin_μ ‖ĩ − S(μ, ī) ũ/Ω‖²` over `]−π, π]`, searched on a
//! uniform grid and refined by golden section around the grid minima.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::demod::DemodulatedCurrents;
use crate::frame::{angle_diff, wrap_angle};
use crate::magnetics::{saliency_matrix_with, AdmittanceModel, MagneticsError, MotorParams};
use crate::vec2::{Vec2, Voltage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("injection amplitude must be non-zero")]
    ZeroInjection,
    #[error("saliency model invalid over the whole angle grid (ī = ({}, {}) A)", i_bar.x, i_bar.y)]
    NoValidAngle { i_bar: Vec2 },
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

/// Search and ambiguity settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub model: AdmittanceModel,
    /// Coarse grid points over one turn.
    pub grid_points: usize,
    /// Golden-section bracket width at which refinement stops (rad).
    pub tolerance: f64,
    /// A second minimum with residual `<= ratio·best + floor` is ambiguous.
    pub ambiguity_ratio: f64,
    /// Absolute ambiguity floor, relative to `‖ũ/(Ω L_min)‖²`.
    pub ambiguity_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            model: AdmittanceModel::default(),
            grid_points: 360,
            tolerance: 1e-4,
            ambiguity_ratio: 1.2,
            ambiguity_floor: 1e-9,
        }
    }
}

/// Injection data the estimator needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RippleModel {
    /// Commanded injection amplitude (V, controller frame).
    pub u_tilde: Voltage,
    pub omega_inj: f64,
}

impl RippleModel {
    fn flux_ripple(&self) -> Vec2 {
        self.u_tilde * (1.0 / self.omega_inj)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionEstimate {
    /// Electrical angle, wrapped (rad).
    pub theta_hat: f64,
    /// Objective at the minimum (A²).
    pub residual: f64,
    pub ambiguity: bool,
}

/// `‖ĩ − S(μ, ī) ũ/Ω‖²`.
pub fn residual(
    mu: f64,
    d: &DemodulatedCurrents,
    ripple: &RippleModel,
    p: &MotorParams,
    model: AdmittanceModel,
) -> Result<f64, MagneticsError> {
    let s = saliency_matrix_with(model, mu, d.i_bar, p)?;
    Ok((d.i_tilde - s.mul_vec(ripple.flux_ripple())).norm_sq())
}

/// Golden-section minimum of `g` on `[a, b]`.
fn golden_section(mut a: f64, mut b: f64, tol: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > tol {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    let x = 0.5 * (a + b);
    let gx = g(x);
    [(x, gx), (c, gc), (d, gd)]
        .into_iter()
        .fold((x, gx), |best, cand| if cand.1 < best.1 { cand } else { best })
}

/// Minimizes the residual over `μ`. Returns `(μ, residual)` candidates sorted
/// by residual: the best local minimum first, then the runner-up if any.
pub fn local_minima(
    d: &DemodulatedCurrents,
    ripple: &RippleModel,
    p: &MotorParams,
    cfg: &EstimatorConfig,
) -> Result<Vec<(f64, f64)>, EstimateError> {
    let n = cfg.grid_points.max(3);
    let h = TAU / n as f64;
    // Grid over ]−π, π].
    let mus: Vec<f64> = (1..=n).map(|k| -PI + k as f64 * h).collect();
    let eval = |mu: f64| residual(mu, d, ripple, p, cfg.model).unwrap_or(f64::INFINITY);
    let values: Vec<f64> = mus.iter().map(|&m| eval(m)).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(EstimateError::NoValidAngle { i_bar: d.i_bar });
    }
    let mut minima: Vec<(f64, f64)> = (0..n)
        .filter(|&k| {
            let (prev, next) = (values[(k + n - 1) % n], values[(k + 1) % n]);
            values[k].is_finite() && values[k] <= prev && values[k] < next
        })
        .map(|k| golden_section(mus[k] - h, mus[k] + h, cfg.tolerance, eval))
        .map(|(mu, r)| (wrap_angle(mu), r))
        .collect();
    if minima.is_empty() {
        // Flat objective: take the smallest grid value.
        let k = (0..n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        minima.push((mus[k], values[k]));
    }
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    minima.truncate(2);
    Ok(minima)
}

/// Position estimate for one demodulated sample.
///
/// When a second minimum is within the ambiguity margin the flag is set and,
/// given a `hint`, the candidate nearest to it is returned.
pub fn estimate(
    d: &DemodulatedCurrents,
    theta_c: f64,
    ripple: &RippleModel,
    p: &MotorParams,
    hint: Option<f64>,
    cfg: &EstimatorConfig,
) -> Result<PositionEstimate, EstimateError> {
    if ripple.u_tilde.norm() == 0.0 {
        return Err(EstimateError::ZeroInjection);
    }
    let minima = local_minima(d, ripple, p, cfg)?;
    Ok(resolve(&minima, theta_c, ripple, p, hint, cfg))
}

/// Picks the estimate among the candidates of [`local_minima`].
pub fn resolve(
    minima: &[(f64, f64)],
    theta_c: f64,
    ripple: &RippleModel,
    p: &MotorParams,
    hint: Option<f64>,
    cfg: &EstimatorConfig,
) -> PositionEstimate {
    let (best_mu, best_r) = minima[0];
    let scale = (ripple.flux_ripple().norm() / p.ld.min(p.lq)).powi(2);
    let floor = cfg.ambiguity_floor * scale;
    let rival = minima
        .get(1)
        .copied()
        .filter(|&(_, r)| r <= cfg.ambiguity_ratio * best_r + floor);
    let (mu, r) = match (rival, hint) {
        (Some(other), Some(h)) => {
            let dist = |mu: f64| angle_diff(theta_c + mu, h).abs();
            if dist(other.0) < dist(best_mu) {
                other
            } else {
                (best_mu, best_r)
            }
        }
        _ => (best_mu, best_r),
    };
    PositionEstimate {
        theta_hat: wrap_angle(theta_c + mu),
        residual: r.max(0.0),
        ambiguity: rival.is_some(),
    }
}

/// First-order low-pass on an angle, following the shortest arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleSmoother {
    /// Time constant (s).
    pub tau: f64,
    state: Option<f64>,
}

impl AngleSmoother {
    pub fn new(tau: f64) -> Self {
        Self { tau, state: None }
    }

    pub fn update(&mut self, theta: f64, dt: f64) -> f64 {
        let next = match self.state {
            None => theta,
            Some(s) => {
                let a = 1.0 - (-dt / self.tau).exp();
                s + a * angle_diff(theta, s)
            }
        };
        let next = wrap_angle(next);
        self.state = Some(next);
        next
    }
}
