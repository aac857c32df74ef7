//! Open-loop V/f scenarios with signal injection.
//!
//! The controller applies `u_γδ = u_rd(t) + ω_c(t) φm + ũ f(Ωt)` in the frame
//! at `θ_c(t) = ∫ω_c`. The plant is integrated in the rotor frame with a
//! step of `T/steps_per_period` and sampled on an exact sub-grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::frame::{rotate, wrap_angle};
use crate::injection::InjectionConfig;
use crate::magnetics::MotorParams;
use crate::sim::{step_with, MotorState, SimError, SimInput, VoltageInput};
use crate::trace::{ScenarioTrace, TraceRecord};
use crate::vec2::{Vec2, Voltage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("invalid sampling: {0}")]
    Sampling(String),
    #[error("unknown scenario `{0}` (built-ins: rest, long-test, speed-reversal, load-step)")]
    Unknown(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Piecewise-linear function of time through `(t, v)` points.
///
/// Constant before the first and after the last point. Two points at the same
/// time make a jump; the function is right-continuous there.
#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise {
    points: Vec<(f64, f64)>,
    /// `∫` from the first point to each point.
    cumulative: Vec<f64>,
}

impl Piecewise {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ScenarioError> {
        if points.is_empty() {
            return Err(ScenarioError::Profile(
                "piecewise profile needs at least one point".into(),
            ));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(ScenarioError::Profile("non-finite profile point".into()));
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(ScenarioError::Profile("profile times must be non-decreasing".into()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
            cumulative.push(acc);
        }
        Ok(Self { points, cumulative })
    }

    pub fn constant(v: f64) -> Self {
        Self::new(vec![(0.0, v)]).expect("finite constant")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Index of the last point with time `<= t`.
    fn segment(&self, t: f64) -> Option<usize> {
        match self.points.partition_point(|(tk, _)| *tk <= t) {
            0 => None,
            k => Some(k - 1),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let Some(k) = self.segment(t) else {
            return self.points[0].1;
        };
        match self.points.get(k + 1) {
            None => self.points[k].1,
            Some(&(t1, v1)) => {
                let (t0, v0) = self.points[k];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// `∫_0^t` of the function.
    pub fn integral(&self, t: f64) -> f64 {
        self.antiderivative(t) - self.antiderivative(0.0)
    }

    fn antiderivative(&self, t: f64) -> f64 {
        let Some(k) = self.segment(t) else {
            let (t0, v0) = self.points[0];
            return v0 * (t - t0);
        };
        let (tk, vk) = self.points[k];
        self.cumulative[k] + 0.5 * (t - tk) * (vk + self.eval(t))
    }

    pub fn time_scaled(&self, s: f64) -> Self {
        Self::new(self.points.iter().map(|(t, v)| (t * s, *v)).collect()).expect("scaling keeps order")
    }
}

/// Piecewise-constant vector targets through a first-order low-pass,
/// evaluated in closed form. The output starts at zero at `t = 0`; the target
/// is zero before the first breakpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredSteps {
    targets: Vec<(f64, Vec2)>,
    tau: f64,
    /// `(start, output at start, target)` per constant-target segment.
    segments: Vec<(f64, Vec2, Vec2)>,
}

/// Default low-pass time constant of the resistive-drop compensation (s).
pub const DEFAULT_URD_TAU: f64 = 0.05;

impl FilteredSteps {
    pub fn new(targets: Vec<(f64, Vec2)>, tau: f64) -> Result<Self, ScenarioError> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(ScenarioError::Profile(format!(
                "filter time constant must be >= 0, got {tau}"
            )));
        }
        if targets.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(ScenarioError::Profile("non-finite u_rd target".into()));
        }
        if targets.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(ScenarioError::Profile(
                "u_rd target times must be non-decreasing".into(),
            ));
        }
        let target_at = |t: f64| {
            targets
                .iter()
                .take_while(|(tk, _)| *tk <= t)
                .last()
                .map_or(Vec2::ZERO, |(_, v)| *v)
        };
        let mut segments = vec![(0.0, Vec2::ZERO, target_at(0.0))];
        for &(tk, _) in targets.iter().filter(|(tk, _)| *tk > 0.0) {
            let &(s, v0, c) = segments.last().unwrap();
            if tk == s {
                continue;
            }
            let v = filter(v0, c, tk - s, tau);
            segments.push((tk, v, target_at(tk)));
        }
        Ok(Self { targets, tau, segments })
    }

    pub fn zero() -> Self {
        Self::new(Vec::new(), DEFAULT_URD_TAU).expect("empty targets")
    }

    pub fn targets(&self) -> &[(f64, Vec2)] {
        &self.targets
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eval(&self, t: f64) -> Vec2 {
        if t < 0.0 {
            return Vec2::ZERO;
        }
        let k = self.segments.partition_point(|(s, _, _)| *s <= t) - 1;
        let (s, v0, c) = self.segments[k];
        filter(v0, c, t - s, self.tau)
    }

    pub fn time_scaled(&self, s: f64) -> Self {
        Self::new(self.targets.iter().map(|(t, v)| (t * s, *v)).collect(), self.tau).expect("scaling keeps order")
    }
}

fn filter(v0: Vec2, target: Vec2, elapsed: f64, tau: f64) -> Vec2 {
    if tau == 0.0 {
        return target;
    }
    target + (v0 - target) * (-elapsed / tau).exp()
}

/// Time functions driving one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioProfile {
    pub name: String,
    /// Length of the run (s).
    pub duration: f64,
    /// Controller speed `ω_c` (electrical rad/s).
    pub omega_c: Piecewise,
    /// Load torque (N·m).
    pub tau_l: Piecewise,
    /// Resistive-drop compensation `u_rd` (V, controller frame).
    pub u_rd: FilteredSteps,
    /// Initial interval excluded from error statistics (s).
    pub settle: f64,
}

impl ScenarioProfile {
    /// Everything zero: the motor stays at rest.
    pub fn rest(duration: f64) -> Self {
        Self {
            name: "rest".into(),
            duration,
            omega_c: Piecewise::constant(0.0),
            tau_l: Piecewise::constant(0.0),
            u_rd: FilteredSteps::zero(),
            settle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(ScenarioError::Profile(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        if !(self.settle >= 0.0) || !self.settle.is_finite() {
            return Err(ScenarioError::Profile(format!(
                "settle must be >= 0, got {}",
                self.settle
            )));
        }
        Ok(())
    }

    /// Stretches all breakpoints, the duration and the settle time by `s`.
    /// The `u_rd` filter time constant is a physical constant and is kept.
    pub fn time_scaled(&self, s: f64) -> Result<Self, ScenarioError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ScenarioError::Profile(format!("time scale must be > 0, got {s}")));
        }
        Ok(Self {
            name: self.name.clone(),
            duration: self.duration * s,
            omega_c: self.omega_c.time_scaled(s),
            tau_l: self.tau_l.time_scaled(s),
            u_rd: self.u_rd.time_scaled(s),
            settle: self.settle * s,
        })
    }

    /// Controller angle `θ_c(t) = ∫_0^t ω_c`, unwrapped.
    pub fn theta_c(&self, t: f64) -> f64 {
        self.omega_c.integral(t)
    }

    /// Controller voltage without injection, `u_rd + ω_c φm`.
    pub fn base_voltage(&self, t: f64, p: &MotorParams) -> Voltage {
        self.u_rd.eval(t) + p.magnet_flux() * self.omega_c.eval(t)
    }
}

/// Built-in scenario names.
pub const BUILTIN_SCENARIOS: [&str; 4] = ["rest", "long-test", "speed-reversal", "load-step"];

/// Time scale applied to a built-in when none is given.
pub fn default_time_scale(name: &str) -> f64 {
    if name == "long-test" {
        0.1
    } else {
        1.0
    }
}

/// Torque rise time of the `load-step` scenario (s).
pub const LOAD_STEP_RISE: f64 = 0.5;

/// Resistive-drop target for a steady current of `k·In` along γ.
fn drop_for(k: f64, p: &MotorParams) -> Vec2 {
    Vec2::new(k * p.r * p.i_n, 0.0)
}

fn rated_speed(p: &MotorParams, name: &str) -> Result<f64, ScenarioError> {
    p.rated_electrical_speed()
        .ok_or_else(|| ScenarioError::Profile(format!("scenario `{name}` needs the motor's rated_rpm")))
}

/// Builds a built-in scenario at its nominal time scale (1.0).
pub fn builtin(name: &str, p: &MotorParams) -> Result<ScenarioProfile, ScenarioError> {
    let tr = p.rated_torque();
    let pw = |pts: &[(f64, f64)]| Piecewise::new(pts.to_vec());
    let profile = match name {
        "rest" => ScenarioProfile::rest(0.1),
        // Magnetize, ramp the load to 150 % at -0.2 % speed, then sweep the
        // speed reference through zero to +0.2 %.
        "speed-reversal" => {
            let w = 0.002 * rated_speed(p, name)?;
            ScenarioProfile {
                name: name.into(),
                duration: 20.0,
                omega_c: pw(&[(0.0, -w), (2.0, -w), (18.0, w)])?,
                tau_l: pw(&[(0.0, 0.0), (0.5, 0.0), (1.5, 1.5 * tr)])?,
                u_rd: FilteredSteps::new(vec![(0.0, drop_for(2.0, p))], DEFAULT_URD_TAU)?,
                settle: 2.0,
            }
        }
        // Zero speed, no load to rated torque with a 0.5 s torque rise.
        "load-step" => ScenarioProfile {
            name: name.into(),
            duration: 3.5,
            omega_c: Piecewise::constant(0.0),
            tau_l: pw(&[(0.0, 0.0), (1.5, 0.0), (1.5 + LOAD_STEP_RISE, tr)])?,
            u_rd: FilteredSteps::new(vec![(0.0, drop_for(1.5, p))], DEFAULT_URD_TAU)?,
            settle: 0.5,
        },
        // Speed within ±5 % of rated, torque between 0 and 180 %, over 210 s.
        "long-test" => {
            let w = 0.05 * rated_speed(p, name)?;
            ScenarioProfile {
                name: name.into(),
                duration: 210.0,
                omega_c: pw(&[
                    (0.0, 0.0),
                    (20.0, 0.0),
                    (40.0, w),
                    (70.0, w),
                    (100.0, -w),
                    (130.0, -w),
                    (150.0, 0.0),
                    (210.0, 0.0),
                ])?,
                tau_l: pw(&[
                    (0.0, 0.0),
                    (10.0, 0.0),
                    (20.0, 0.5 * tr),
                    (50.0, 1.0 * tr),
                    (60.0, 1.0 * tr),
                    (80.0, 0.2 * tr),
                    (120.0, 1.0 * tr),
                    (140.0, 0.5 * tr),
                    (160.0, 1.8 * tr),
                    (180.0, 1.8 * tr),
                    (195.0, 0.0),
                ])?,
                u_rd: FilteredSteps::new(
                    vec![
                        (0.0, drop_for(1.0, p)),
                        (15.0, drop_for(1.5, p)),
                        (45.0, drop_for(1.8, p)),
                        (150.0, drop_for(2.3, p)),
                        (190.0, drop_for(1.0, p)),
                    ],
                    DEFAULT_URD_TAU,
                )?,
                settle: 1.0,
            }
        }
        _ => return Err(ScenarioError::Unknown(name.into())),
    };
    Ok(profile)
}

/// Sampling and integration settings of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Measurement rate (Hz).
    pub sample_rate: f64,
    /// Integration steps per injection period.
    pub steps_per_period: u32,
    /// Standard deviation of additive noise on the sampled `i_αβ` (A).
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            sample_rate: 4000.0,
            steps_per_period: 40,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

/// Plant and controller state at a sample instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: MotorState,
    /// Unwrapped controller angle.
    pub theta_c: f64,
    pub u_gd: Voltage,
    pub tau_l: f64,
}

/// Integration grid derived from the injection period and sample rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dt: f64,
    pub steps_per_sample: usize,
    pub samples: usize,
}

impl Grid {
    pub fn new(duration: f64, inj: &InjectionConfig, opts: &SimOptions) -> Result<Self, ScenarioError> {
        if opts.steps_per_period < 20 {
            return Err(ScenarioError::Sampling(format!(
                "at least 20 integration steps per injection period are needed, got {}",
                opts.steps_per_period
            )));
        }
        if !(opts.sample_rate > 0.0) || !opts.sample_rate.is_finite() {
            return Err(ScenarioError::Sampling(format!(
                "sample rate must be > 0, got {}",
                opts.sample_rate
            )));
        }
        let dt = inj.period() / opts.steps_per_period as f64;
        let ratio = 1.0 / (opts.sample_rate * dt);
        let steps_per_sample = ratio.round();
        if steps_per_sample < 1.0 || (ratio - steps_per_sample).abs() > 1e-9 * ratio {
            return Err(ScenarioError::Sampling(format!(
                "sample period must be a whole number of integration steps ({} Hz sampling, step {dt:e} s)",
                opts.sample_rate
            )));
        }
        let samples = (duration * opts.sample_rate + 1e-9).floor() as usize + 1;
        Ok(Self {
            dt,
            steps_per_sample: steps_per_sample as usize,
            samples,
        })
    }
}

/// Runs a scenario from rest, calling `observe` at every sample instant.
pub fn simulate_with(
    profile: &ScenarioProfile,
    inj: &InjectionConfig,
    p: &MotorParams,
    opts: &SimOptions,
    observe: impl FnMut(&Sample),
) -> Result<MotorState, ScenarioError> {
    simulate_from(profile, inj, p, opts, MotorState::at_rest(), observe)
}

/// Runs a scenario from `initial`, calling `observe` at every sample instant.
pub fn simulate_from(
    profile: &ScenarioProfile,
    inj: &InjectionConfig,
    p: &MotorParams,
    opts: &SimOptions,
    initial: MotorState,
    mut observe: impl FnMut(&Sample),
) -> Result<MotorState, ScenarioError> {
    profile.validate()?;
    let grid = Grid::new(profile.duration, inj, opts)?;
    let phi_m = p.magnet_flux();
    let injection_time = |stage: crate::ode::Stage| {
        // Square edges fall on step boundaries: sample the level inside the step.
        if inj.waveform.is_square() {
            stage.step_mid()
        } else {
            stage.t
        }
    };
    let input_at = |t: f64, t_inj: f64| {
        let base = profile.u_rd.eval(t) + phi_m * profile.omega_c.eval(t);
        SimInput {
            voltage: VoltageInput::GammaDelta {
                u: inj.injected_voltage(t_inj, base),
                theta_c: profile.theta_c(t),
            },
            tau_l: profile.tau_l.eval(t),
        }
    };
    let mut state = initial;
    for j in 0..grid.samples {
        let t = j as f64 * grid.steps_per_sample as f64 * grid.dt;
        observe(&Sample {
            t,
            state,
            theta_c: profile.theta_c(t),
            u_gd: inj.injected_voltage(t, profile.base_voltage(t, p)),
            tau_l: profile.tau_l.eval(t),
        });
        if j + 1 == grid.samples {
            break;
        }
        for k in 0..grid.steps_per_sample {
            let t0 = (j * grid.steps_per_sample + k) as f64 * grid.dt;
            state = step_with(&state, t0, grid.dt, p, |stage| input_at(stage.t, injection_time(stage)))?;
        }
    }
    Ok(state)
}

/// Runs a scenario and records the measurement trace.
pub fn run_scenario(
    profile: &ScenarioProfile,
    inj: &InjectionConfig,
    p: &MotorParams,
    opts: &SimOptions,
) -> Result<ScenarioTrace, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = if opts.noise_std > 0.0 {
        Some(Normal::new(0.0, opts.noise_std).map_err(|e| ScenarioError::Sampling(format!("noise std: {e}")))?)
    } else {
        None
    };
    let mut records = Vec::new();
    simulate_with(profile, inj, p, opts, |s| {
        let mut i_ab = rotate(s.state.current(p), s.state.theta);
        if let Some(n) = &noise {
            i_ab += Vec2::new(n.sample(&mut rng), n.sample(&mut rng));
        }
        records.push(TraceRecord {
            t: s.t,
            u_gd: s.u_gd,
            i_gd: rotate(i_ab, -s.theta_c),
            i_ab,
            theta: wrap_angle(s.state.theta),
            omega: s.state.omega,
            theta_c: wrap_angle(s.theta_c),
            tau_l: s.tau_l,
        });
    })?;
    Ok(ScenarioTrace {
        dt: 1.0 / opts.sample_rate,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::angle_diff;
    use crate::sim::{gamma_delta_step, GammaDeltaState};
    use approx::assert_relative_eq;

    #[test]
    fn piecewise_eval_and_jump() {
        let f = Piecewise::new(vec![(0.0, 1.0), (1.0, 3.0), (1.0, -1.0), (2.0, -1.0)]).unwrap();
        assert_eq!(f.eval(-5.0), 1.0);
        assert_eq!(f.eval(0.5), 2.0);
        assert_eq!(f.eval(1.0), -1.0);
        assert_relative_eq!(f.eval(0.999999), 2.999998, max_relative = 1e-12);
        assert_eq!(f.eval(10.0), -1.0);
        assert!(Piecewise::new(vec![(1.0, 0.0), (0.5, 0.0)]).is_err());
        assert!(Piecewise::new(Vec::new()).is_err());
    }

    #[test]
    fn piecewise_integral_matches_quadrature() {
        let f = Piecewise::new(vec![(0.5, 2.0), (1.5, -1.0), (1.5, 4.0), (3.0, 0.0)]).unwrap();
        for &t in &[0.0, 0.3, 0.5, 1.0, 1.5, 2.2, 3.0, 4.5] {
            let n = 200_000;
            let h = t / n as f64;
            let q: f64 = (0..n).map(|k| f.eval((k as f64 + 0.5) * h) * h).sum();
            assert!((f.integral(t) - q).abs() < 1e-4, "t = {t}: {} vs {q}", f.integral(t));
        }
    }

    #[test]
    fn filtered_steps_closed_form() {
        let tau = 0.05;
        let f = FilteredSteps::new(vec![(0.0, Vec2::new(2.0, 0.0)), (0.1, Vec2::new(0.0, 1.0))], tau).unwrap();
        assert_eq!(f.eval(0.0), Vec2::ZERO);
        let e1 = (-0.1f64 / tau).exp();
        let at_switch = Vec2::new(2.0 * (1.0 - e1), 0.0);
        assert_relative_eq!(f.eval(0.1).x, at_switch.x, max_relative = 1e-14);
        let t = 0.13;
        let e2 = (-(t - 0.1) / tau).exp();
        let expect = Vec2::new(0.0, 1.0) + (at_switch - Vec2::new(0.0, 1.0)) * e2;
        assert_relative_eq!(f.eval(t).x, expect.x, max_relative = 1e-14);
        assert_relative_eq!(f.eval(t).y, expect.y, max_relative = 1e-14);
        // Fine-step Euler agrees with the closed form.
        let mut v = Vec2::ZERO;
        let h = 1e-6;
        for k in 0..130_000 {
            let target = if (k as f64) * h < 0.1 {
                Vec2::new(2.0, 0.0)
            } else {
                Vec2::new(0.0, 1.0)
            };
            v += (target - v) * (h / tau);
        }
        assert!((v - f.eval(t)).norm() < 1e-4);
        let instant = FilteredSteps::new(vec![(0.2, Vec2::new(1.0, 1.0))], 0.0).unwrap();
        assert_eq!(instant.eval(0.1), Vec2::ZERO);
        assert_eq!(instant.eval(0.2), Vec2::new(1.0, 1.0));
    }

    #[test]
    fn rest_scenario_stays_at_rest() {
        let p = MotorParams::ipm_750w();
        let inj = InjectionConfig::square(0.0);
        let trace = run_scenario(&ScenarioProfile::rest(0.05), &inj, &p, &SimOptions::default()).unwrap();
        assert_eq!(trace.len(), 201);
        for r in &trace.records {
            assert_eq!(r.i_gd, Vec2::ZERO);
            assert_eq!(r.theta, 0.0);
            assert_eq!(r.omega, 0.0);
        }
    }

    #[test]
    fn grid_rejects_misaligned_sampling() {
        let inj = InjectionConfig::square(15.0);
        let bad = SimOptions {
            sample_rate: 3000.0,
            ..SimOptions::default()
        };
        assert!(matches!(Grid::new(1.0, &inj, &bad), Err(ScenarioError::Sampling(_))));
        let g = Grid::new(1.0, &inj, &SimOptions::default()).unwrap();
        assert_eq!(g.steps_per_sample, 5);
        assert_eq!(g.samples, 4001);
    }

    #[test]
    fn builtins_build_and_scale() {
        let p = MotorParams::spm_1500w();
        for name in BUILTIN_SCENARIOS {
            let prof = builtin(name, &p).unwrap();
            let scaled = prof.time_scaled(0.5).unwrap();
            assert_relative_eq!(scaled.duration, 0.5 * prof.duration);
            assert_relative_eq!(scaled.tau_l.eval(0.5 * 1.2), prof.tau_l.eval(1.2));
        }
        assert!(matches!(builtin("nope", &p), Err(ScenarioError::Unknown(_))));
        let sr = builtin("speed-reversal", &p).unwrap();
        let w = p.rated_electrical_speed().unwrap();
        assert_relative_eq!(sr.omega_c.eval(0.0), -0.002 * w);
        assert_relative_eq!(sr.omega_c.eval(sr.duration), 0.002 * w);
        assert_relative_eq!(sr.tau_l.eval(sr.duration), 1.5 * p.rated_torque());
        let ls = builtin("load-step", &p).unwrap();
        assert_eq!(ls.tau_l.eval(1.0), 0.0);
        assert_relative_eq!(ls.tau_l.eval(1.75), 0.5 * p.rated_torque());
        assert_relative_eq!(ls.tau_l.eval(2.0), p.rated_torque());
    }

    #[test]
    fn deterministic_and_noise_seeded() {
        let p = MotorParams::ipm_750w();
        let prof = builtin("load-step", &p).unwrap().time_scaled(0.02).unwrap();
        let inj = InjectionConfig::square(15.0);
        let a = run_scenario(&prof, &inj, &p, &SimOptions::default()).unwrap();
        let b = run_scenario(&prof, &inj, &p, &SimOptions::default()).unwrap();
        assert_eq!(a, b);
        let noisy = SimOptions {
            noise_std: 0.01,
            seed: 7,
            ..SimOptions::default()
        };
        let c = run_scenario(&prof, &inj, &p, &noisy).unwrap();
        let d = run_scenario(&prof, &inj, &p, &noisy).unwrap();
        assert_eq!(c, d);
        assert_ne!(a, c);
        assert_eq!(a.records.last().unwrap().theta, c.records.last().unwrap().theta);
    }

    #[test]
    fn recorded_voltage_is_vf_plus_injection() {
        let p = MotorParams::ipm_750w();
        let prof = builtin("speed-reversal", &p).unwrap().time_scaled(0.01).unwrap();
        let inj = InjectionConfig::square(15.0);
        let trace = run_scenario(&prof, &inj, &p, &SimOptions::default()).unwrap();
        for r in trace.records.iter().take(40) {
            let base = prof.base_voltage(r.t, &p);
            let diff = r.u_gd - base;
            assert!((diff.x.abs() - 15.0).abs() < 1e-9 && diff.y.abs() < 1e-12);
        }
        // Sample k of a period: first half +, second half -.
        let signs: Vec<f64> = trace.records[..8]
            .iter()
            .map(|r| (r.u_gd - prof.base_voltage(r.t, &p)).x.signum())
            .collect();
        assert_eq!(signs, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    /// Integrating the controller-frame model directly gives the same
    /// trajectory as the rotor-frame run.
    #[test]
    fn frame_consistency() {
        let p = MotorParams::ipm_750w();
        let prof = ScenarioProfile {
            name: "x".into(),
            duration: 0.2,
            omega_c: Piecewise::new(vec![(0.0, 0.0), (0.2, 20.0)]).unwrap(),
            tau_l: Piecewise::new(vec![(0.0, 0.0), (0.2, 2.0)]).unwrap(),
            u_rd: FilteredSteps::new(vec![(0.0, Vec2::new(8.0, 1.0))], 0.05).unwrap(),
            settle: 0.0,
        };
        let inj = InjectionConfig::new(
            crate::injection::DEFAULT_OMEGA_INJ,
            Vec2::new(15.0, 0.0),
            crate::injection::Waveform::Sine,
        )
        .unwrap();
        let opts = SimOptions::default();
        let end = simulate_with(&prof, &inj, &p, &opts, |_| {}).unwrap();
        let grid = Grid::new(prof.duration, &inj, &opts).unwrap();
        let mut s = GammaDeltaState::default();
        let steps = (grid.samples - 1) * grid.steps_per_sample;
        for k in 0..steps {
            let t0 = k as f64 * grid.dt;
            s = gamma_delta_step(&s, t0, grid.dt, &p, |st| {
                (
                    inj.injected_voltage(st.t, prof.base_voltage(st.t, &p)),
                    prof.omega_c.eval(st.t),
                    prof.tau_l.eval(st.t),
                )
            })
            .unwrap();
        }
        let via_gd = s.to_dq();
        assert!((via_gd.phi - end.phi).norm() < 1e-8 * end.phi.norm());
        assert!((via_gd.omega - end.omega).abs() < 1e-8 * end.omega.abs().max(1.0));
        assert!(angle_diff(via_gd.theta, end.theta).abs() < 1e-8);
        assert!((s.theta_c - prof.theta_c(prof.duration)).abs() < 1e-9);
    }
}
