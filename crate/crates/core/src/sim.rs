//! Electromechanical dynamics with flux linkage as electrical state.
//!
//! In the rotor frame:
//!
//! ```text
//! dφ/dt      = u - R i - ω K (φ + φm),      i = I(φ)
//! (J/n²) dω/dt = 3/2 iᵀ K (φ + φm) - τL/n
//! dθ/dt      = ω
//! ```
//!
//! `ω` and `θ` are electrical. The same equations written in the
//! controller frame are provided by [`gamma_delta_derivatives`]; the two
//! forms are related by `x_γδ = M_(θ-θc) x_dq`.

use thiserror::Error;

use crate::frame::{gamma_delta_to_dq, rotate, wrap_angle};
use crate::magnetics::{current_from_flux, energy, hessian, MotorParams};
use crate::ode::{rk4_step, Stage};
use crate::vec2::{CurrentDQ, FluxDQ, Vec2, Voltage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state left the magnetic validity region at t = {t} s (flux ({}, {}) Wb)", flux.x, flux.y)]
    OutsideValidity { t: f64, flux: FluxDQ },
    #[error("non-finite state at t = {t} s")]
    NonFinite { t: f64 },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
}

/// Machine state. `theta` accumulates without wrapping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MotorState {
    /// Current-induced flux linkage, rotor frame (Wb).
    pub phi: FluxDQ,
    /// Electrical speed (rad/s).
    pub omega: f64,
    /// Electrical angle (rad), unwrapped.
    pub theta: f64,
}

impl MotorState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    pub fn wrapped_theta(&self) -> f64 {
        wrap_angle(self.theta)
    }

    pub fn current(&self, p: &MotorParams) -> CurrentDQ {
        current_from_flux(self.phi, p)
    }

    fn to_array(self) -> [f64; 4] {
        [self.phi.x, self.phi.y, self.omega, self.theta]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            phi: Vec2::new(a[0], a[1]),
            omega: a[2],
            theta: a[3],
        }
    }
}

/// Impressed voltage with the frame it is expressed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VoltageInput {
    Dq(Voltage),
    /// Controller frame; needs the controller angle.
    GammaDelta {
        u: Voltage,
        theta_c: f64,
    },
    AlphaBeta(Voltage),
}

impl VoltageInput {
    /// Voltage in the rotor frame at rotor angle `theta`.
    pub fn to_dq(&self, theta: f64) -> Voltage {
        match *self {
            VoltageInput::Dq(u) => u,
            VoltageInput::GammaDelta { u, theta_c } => gamma_delta_to_dq(u, theta, theta_c),
            VoltageInput::AlphaBeta(u) => rotate(u, -theta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimInput {
    pub voltage: VoltageInput,
    /// Load torque (N·m).
    pub tau_l: f64,
}

impl SimInput {
    pub fn dq(u: Voltage, tau_l: f64) -> Self {
        Self {
            voltage: VoltageInput::Dq(u),
            tau_l,
        }
    }
}

/// Time derivative of [`MotorState`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateDerivative {
    pub dphi: Vec2,
    pub domega: f64,
    pub dtheta: f64,
}

/// Electromagnetic torque `3/2 n iᵀ K (φ + φm)` (N·m).
pub fn electromagnetic_torque(phi: FluxDQ, p: &MotorParams) -> f64 {
    let i = current_from_flux(phi, p);
    1.5 * p.n as f64 * i.dot((phi + p.magnet_flux()).perp())
}

pub fn derivatives(s: &MotorState, input: &SimInput, p: &MotorParams) -> StateDerivative {
    let u = input.voltage.to_dq(s.theta);
    let i = current_from_flux(s.phi, p);
    let linked = s.phi + p.magnet_flux();
    let dphi = u - i * p.r - linked.perp() * s.omega;
    let n = p.n as f64;
    let torque_term = 1.5 * i.dot(linked.perp()) - input.tau_l / n;
    StateDerivative {
        dphi,
        domega: n * n / p.j * torque_term,
        dtheta: s.omega,
    }
}

/// Power balance terms at one instant, all in watts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerBalance {
    /// `3/2 uᵀi`.
    pub electrical: f64,
    /// `3/2 R |i|²`.
    pub resistive: f64,
    /// `3/2 dH/dt`.
    pub magnetic_rate: f64,
    /// `τem ω/n`.
    pub mechanical: f64,
}

impl PowerBalance {
    pub fn mismatch(&self) -> f64 {
        self.electrical - self.resistive - self.magnetic_rate - self.mechanical
    }
}

/// Instantaneous power terms; `dH/dt` is taken from the flux derivative.
pub fn power_balance(s: &MotorState, input: &SimInput, p: &MotorParams) -> PowerBalance {
    let u = input.voltage.to_dq(s.theta);
    let i = current_from_flux(s.phi, p);
    let d = derivatives(s, input, p);
    PowerBalance {
        electrical: 1.5 * u.dot(i),
        resistive: 1.5 * p.r * i.norm_sq(),
        magnetic_rate: 1.5 * i.dot(d.dphi),
        mechanical: electromagnetic_torque(s.phi, p) * s.omega / p.n as f64,
    }
}

/// Magnetic energy stored in the current-induced flux, scaled like the
/// power terms (J).
pub fn stored_energy(s: &MotorState, p: &MotorParams) -> f64 {
    1.5 * energy(s.phi, p)
}

fn check_flux(t: f64, phi: FluxDQ, p: &MotorParams) -> Result<(), SimError> {
    if !phi.is_finite() {
        return Err(SimError::NonFinite { t });
    }
    if !hessian(phi, p).is_positive_definite() {
        return Err(SimError::OutsideValidity { t, flux: phi });
    }
    Ok(())
}

/// One RK4 step with a constant input.
pub fn step(s: &MotorState, input: &SimInput, p: &MotorParams, dt: f64) -> Result<MotorState, SimError> {
    step_with(s, 0.0, dt, p, |_| *input)
}

/// One RK4 step from time `t0`, with the input evaluated per stage.
pub fn step_with(
    s: &MotorState,
    t0: f64,
    dt: f64,
    p: &MotorParams,
    mut input: impl FnMut(Stage) -> SimInput,
) -> Result<MotorState, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidStep(dt));
    }
    let y = rk4_step(&s.to_array(), t0, dt, |stage, y| {
        let st = MotorState::from_array(*y);
        let d = derivatives(&st, &input(stage), p);
        [d.dphi.x, d.dphi.y, d.domega, d.dtheta]
    });
    let next = MotorState::from_array(y);
    if !(next.omega.is_finite() && next.theta.is_finite()) {
        return Err(SimError::NonFinite { t: t0 + dt });
    }
    check_flux(t0 + dt, next.phi, p)?;
    Ok(next)
}

/// Locked-rotor flux derivative `u - R I(φ)` (θ = 0, ω = 0).
pub fn locked_rotor_derivative(phi: FluxDQ, u_dq: Voltage, p: &MotorParams) -> Vec2 {
    u_dq - current_from_flux(phi, p) * p.r
}

/// One RK4 step of the locked-rotor model with constant voltage.
pub fn locked_rotor_step(phi: FluxDQ, u_dq: Voltage, p: &MotorParams, dt: f64) -> Result<FluxDQ, SimError> {
    locked_rotor_step_with(phi, 0.0, dt, p, |_| u_dq)
}

pub fn locked_rotor_step_with(
    phi: FluxDQ,
    t0: f64,
    dt: f64,
    p: &MotorParams,
    mut u_dq: impl FnMut(Stage) -> Voltage,
) -> Result<FluxDQ, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidStep(dt));
    }
    let y = rk4_step(&[phi.x, phi.y], t0, dt, |stage, y| {
        let d = locked_rotor_derivative(Vec2::new(y[0], y[1]), u_dq(stage), p);
        [d.x, d.y]
    });
    let next = Vec2::new(y[0], y[1]);
    check_flux(t0 + dt, next, p)?;
    Ok(next)
}

/// State of the model written in the controller frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GammaDeltaState {
    pub phi: FluxDQ,
    pub omega: f64,
    pub theta: f64,
    pub theta_c: f64,
}

impl GammaDeltaState {
    pub fn from_dq(s: &MotorState, theta_c: f64) -> Self {
        Self {
            phi: rotate(s.phi, s.theta - theta_c),
            omega: s.omega,
            theta: s.theta,
            theta_c,
        }
    }

    pub fn to_dq(&self) -> MotorState {
        MotorState {
            phi: rotate(self.phi, self.theta_c - self.theta),
            omega: self.omega,
            theta: self.theta,
        }
    }

    /// `i_γδ = M_(θ-θc) I(M_(θ-θc)ᵀ φ_γδ)`.
    pub fn current(&self, p: &MotorParams) -> CurrentDQ {
        let delta = self.theta - self.theta_c;
        rotate(current_from_flux(rotate(self.phi, -delta), p), delta)
    }

    fn to_array(self) -> [f64; 5] {
        [self.phi.x, self.phi.y, self.omega, self.theta, self.theta_c]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            phi: Vec2::new(a[0], a[1]),
            omega: a[2],
            theta: a[3],
            theta_c: a[4],
        }
    }
}

/// Derivatives of the controller-frame model:
///
/// ```text
/// dφγδ/dt = uγδ - R iγδ - ωc K φγδ - ω K M_(θ-θc) φm
/// ```
///
/// with the mechanical equations unchanged and `dθc/dt = ωc`.
pub fn gamma_delta_derivatives(
    s: &GammaDeltaState,
    u_gd: Voltage,
    omega_c: f64,
    tau_l: f64,
    p: &MotorParams,
) -> [f64; 5] {
    let delta = s.theta - s.theta_c;
    let i = s.current(p);
    let magnet = rotate(p.magnet_flux(), delta);
    let dphi = u_gd - i * p.r - s.phi.perp() * omega_c - magnet.perp() * s.omega;
    let n = p.n as f64;
    let domega = n * n / p.j * (1.5 * i.dot((s.phi + magnet).perp()) - tau_l / n);
    [dphi.x, dphi.y, domega, s.omega, omega_c]
}

/// One RK4 step of the controller-frame model. `input` returns
/// `(u_γδ, ω_c, τ_L)` at each stage.
pub fn gamma_delta_step(
    s: &GammaDeltaState,
    t0: f64,
    dt: f64,
    p: &MotorParams,
    mut input: impl FnMut(Stage) -> (Voltage, f64, f64),
) -> Result<GammaDeltaState, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidStep(dt));
    }
    let y = rk4_step(&s.to_array(), t0, dt, |stage, y| {
        let st = GammaDeltaState::from_array(*y);
        let (u, omega_c, tau_l) = input(stage);
        gamma_delta_derivatives(&st, u, omega_c, tau_l, p)
    });
    let next = GammaDeltaState::from_array(y);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { t: t0 + dt });
    }
    check_flux(t0 + dt, next.to_dq().phi, p)?;
    Ok(next)
}
