//! Commands behind the `pmsm` binary: simulate, estimate, identify and the
//! averaging check. Each writes its artifacts into an output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{load_motor, load_scenario, motor_to_toml, ConfigError, MotorConfig};
use crate::demod::{demodulate, DemodConfig, DemodError, DemodulatedCurrents};
use crate::estimator::{local_minima, resolve, EstimateError, EstimatorConfig, PositionEstimate, RippleModel};
use crate::frame::{angle_diff, rotate};
use crate::ident::{identify_full, IdError, IdReport, IdSweep};
use crate::injection::{InjectionConfig, InjectionError, Waveform};
use crate::magnetics::MotorParams;
use crate::scenario::{
    builtin, default_time_scale, run_scenario, simulate_from, ScenarioError, ScenarioProfile, SimOptions,
    BUILTIN_SCENARIOS,
};
use crate::sim::MotorState;
use crate::trace::{fmt_sig9, write_atomic, ScenarioTrace, TraceError, DEMOD_COLUMNS, ESTIMATE_COLUMNS, TRACE_COLUMNS};
use crate::vec2::Vec2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Injection(#[from] InjectionError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Demod(#[from] DemodError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Ident(#[from] IdError),
}

impl HarnessError {
    /// 1 for usage, configuration and input errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_)
            | HarnessError::Config(_)
            | HarnessError::Trace(_)
            | HarnessError::Injection(_)
            | HarnessError::Io { .. } => 1,
            HarnessError::Scenario(ScenarioError::Sim(_)) => 2,
            HarnessError::Scenario(_) => 1,
            HarnessError::Demod(DemodError::DegeneratePrimitive) => 2,
            HarnessError::Demod(_) => 1,
            HarnessError::Estimate(EstimateError::ZeroInjection) => 1,
            HarnessError::Estimate(_) | HarnessError::Ident(_) => 2,
        }
    }
}

/// Injection amplitude used when none is given (V).
pub const DEFAULT_U_TILDE: f64 = 15.0;
/// Injection frequency used when none is given (Hz).
pub const DEFAULT_INJ_HZ: f64 = 500.0;

/// Settings shared by all commands.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub motor: MotorConfig,
    /// Built-in scenario name or profile file.
    pub scenario: Option<String>,
    pub omega_inj_hz: f64,
    pub u_tilde: Option<f64>,
    /// Use a linear model in the estimator (the plant is unchanged).
    pub no_saturation: bool,
    pub noise_std: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub time_scale: Option<f64>,
}

impl RunConfig {
    pub fn new(motor: MotorConfig) -> Self {
        Self {
            motor,
            scenario: None,
            omega_inj_hz: DEFAULT_INJ_HZ,
            u_tilde: None,
            no_saturation: false,
            noise_std: 0.0,
            seed: 0,
            out: PathBuf::from("out"),
            time_scale: None,
        }
    }

    pub fn from_motor_path(path: &Path) -> Result<Self, HarnessError> {
        Ok(Self::new(load_motor(path)?))
    }

    /// Square injection on the γ axis.
    pub fn injection(&self, default_u: f64) -> Result<InjectionConfig, HarnessError> {
        let u = self.u_tilde.unwrap_or(default_u);
        if !u.is_finite() {
            return Err(HarnessError::Usage(format!("--u-tilde must be finite, got {u}")));
        }
        Ok(InjectionConfig::new(
            std::f64::consts::TAU * self.omega_inj_hz,
            Vec2::new(u, 0.0),
            Waveform::Square,
        )?)
    }

    pub fn sim_options(&self) -> Result<SimOptions, HarnessError> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(HarnessError::Usage(format!(
                "--noise-std must be >= 0, got {}",
                self.noise_std
            )));
        }
        let mut opts = SimOptions {
            noise_std: self.noise_std,
            seed: self.seed,
            ..SimOptions::default()
        };
        // Keep the sampling an integer number of samples per injection period
        // when the injection is faster than the default grid allows.
        let per = opts.sample_rate / self.omega_inj_hz;
        if per.fract().abs() > 1e-9 || per < crate::demod::MIN_SAMPLES_PER_PERIOD as f64 {
            opts.sample_rate = self.omega_inj_hz * crate::demod::MIN_SAMPLES_PER_PERIOD as f64;
        }
        Ok(opts)
    }

    fn scenario_profile(&self, default: &str) -> Result<ScenarioProfile, HarnessError> {
        resolve_scenario(
            self.scenario.as_deref().unwrap_or(default),
            &self.motor.params,
            self.time_scale,
        )
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// A built-in scenario by name, or a profile file. Built-ins use their
/// default time scale unless one is given.
pub fn resolve_scenario(spec: &str, p: &MotorParams, time_scale: Option<f64>) -> Result<ScenarioProfile, HarnessError> {
    let (profile, default_scale) = if BUILTIN_SCENARIOS.contains(&spec) {
        (builtin(spec, p)?, default_time_scale(spec))
    } else if Path::new(spec).exists() {
        (load_scenario(Path::new(spec))?, 1.0)
    } else {
        return Err(HarnessError::Usage(format!(
            "unknown scenario `{spec}`: expected one of {} or a profile file",
            BUILTIN_SCENARIOS.join(", ")
        )));
    };
    let scale = time_scale.unwrap_or(default_scale);
    if scale == 1.0 {
        Ok(profile)
    } else {
        Ok(profile.time_scaled(scale)?)
    }
}

fn write_out(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    write_atomic(path, contents).map_err(|source| HarnessError::Io {
        path: path.into(),
        source,
    })
}

/// Runs the scenario and writes `trace.csv`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(PathBuf, ScenarioTrace), HarnessError> {
    let profile = cfg.scenario_profile("rest")?;
    let inj = cfg.injection(DEFAULT_U_TILDE)?;
    let trace = run_scenario(&profile, &inj, &cfg.motor.params, &cfg.sim_options()?)?;
    let path = cfg.out_file("trace.csv");
    write_out(&path, trace.to_csv_string().as_bytes())?;
    Ok((path, trace))
}

/// Demodulated currents and position estimate at trace row `index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatedSample {
    pub index: usize,
    pub demod: DemodulatedCurrents,
    pub estimate: PositionEstimate,
}

/// Sample rate of a trace read back from text, snapped to the nearest
/// integer when within rounding of it.
fn trace_rate(trace: &ScenarioTrace) -> f64 {
    let rate = trace.sample_rate();
    if (rate - rate.round()).abs() <= 1e-6 * rate {
        rate.round()
    } else {
        rate
    }
}

/// Demodulates the controller-frame currents of a trace and estimates the
/// angle at every row with a full window. Ambiguous samples are resolved
/// toward the previous estimate.
pub fn estimate_trace(
    trace: &ScenarioTrace,
    inj: &InjectionConfig,
    p: &MotorParams,
    cfg: &EstimatorConfig,
) -> Result<Vec<EstimatedSample>, HarnessError> {
    if trace.len() < 2 {
        return Ok(Vec::new());
    }
    if inj.u_tilde.norm() == 0.0 {
        return Err(EstimateError::ZeroInjection.into());
    }
    let dc = DemodConfig::new(inj, trace_rate(trace))?;
    let times: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
    let demod: Vec<(usize, DemodulatedCurrents)> = demodulate(&times, &trace.currents_gd(), &dc)?
        .into_iter()
        .enumerate()
        .filter_map(|(k, d)| d.map(|d| (k, d)))
        .collect();
    let ripple = RippleModel {
        u_tilde: inj.u_tilde,
        omega_inj: inj.omega_inj,
    };
    let minima = demod
        .par_iter()
        .map(|(_, d)| local_minima(d, &ripple, p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut hint = None;
    Ok(demod
        .into_iter()
        .zip(minima)
        .map(|((index, demod), m)| {
            let estimate = resolve(&m, trace.records[index].theta_c, &ripple, p, hint, cfg);
            hint = Some(estimate.theta_hat);
            EstimatedSample { index, demod, estimate }
        })
        .collect())
}

/// Angle error statistics in electrical degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSummary {
    pub samples: usize,
    pub max_deg: f64,
    pub mean_deg: f64,
    /// Fraction of samples flagged ambiguous.
    pub ambiguous: f64,
}

/// Compares estimates with the true angle of the trace from `settle` on.
pub fn error_summary(trace: &ScenarioTrace, est: &[EstimatedSample], settle: f64) -> ErrorSummary {
    let mut s = ErrorSummary::default();
    let mut sum = 0.0;
    let mut amb = 0usize;
    for e in est {
        let r = &trace.records[e.index];
        if r.t < settle {
            continue;
        }
        let err = angle_diff(e.estimate.theta_hat, r.theta).abs().to_degrees();
        s.samples += 1;
        s.max_deg = s.max_deg.max(err);
        sum += err;
        amb += e.estimate.ambiguity as usize;
    }
    if s.samples > 0 {
        s.mean_deg = sum / s.samples as f64;
        s.ambiguous = amb as f64 / s.samples as f64;
    }
    s
}

impl ErrorSummary {
    pub fn to_toml(&self, settle: f64) -> String {
        format!(
            "settle = {}\nsamples = {}\nmax_error_deg = {}\nmean_error_deg = {}\nambiguous_fraction = {}\n",
            fmt_sig9(settle),
            self.samples,
            fmt_sig9(self.max_deg),
            fmt_sig9(self.mean_deg),
            fmt_sig9(self.ambiguous)
        )
    }
}

/// Trace columns followed by the demodulation and estimation columns and the
/// angle error. Rows before the first full demodulation window are omitted.
pub fn estimates_csv(trace: &ScenarioTrace, est: &[EstimatedSample]) -> String {
    let mut s = String::new();
    let header: Vec<&str> = TRACE_COLUMNS
        .iter()
        .chain(DEMOD_COLUMNS.iter())
        .chain(ESTIMATE_COLUMNS.iter())
        .copied()
        .chain(["error_deg"])
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    let full = trace.to_csv_string();
    let rows: Vec<&str> = full.lines().skip(1).collect();
    for e in est {
        let r = &trace.records[e.index];
        let d = &e.demod;
        let _ = write!(s, "{}", rows[e.index]);
        for v in [
            d.i_bar.x,
            d.i_bar.y,
            d.i_tilde.x,
            d.i_tilde.y,
            e.estimate.theta_hat,
            e.estimate.residual,
        ] {
            let _ = write!(s, ",{}", fmt_sig9(v));
        }
        let err = angle_diff(e.estimate.theta_hat, r.theta).to_degrees();
        let _ = writeln!(s, ",{},{}", e.estimate.ambiguity, fmt_sig9(err));
    }
    s
}

/// Reads a trace, estimates the angle and writes `estimates.csv` and
/// `estimate_summary.toml`. The settle time is `settle`, else the
/// scenario's, else zero.
pub fn cmd_estimate(cfg: &RunConfig, trace_path: &Path, settle: Option<f64>) -> Result<ErrorSummary, HarnessError> {
    let trace = ScenarioTrace::read_csv_file(trace_path)?;
    let settle = match (settle, &cfg.scenario) {
        (Some(s), _) => s,
        (None, Some(_)) => cfg.scenario_profile("rest")?.settle,
        (None, None) => 0.0,
    };
    let p = if cfg.no_saturation {
        cfg.motor.params.without_saturation()
    } else {
        cfg.motor.params
    };
    let inj = cfg.injection(DEFAULT_U_TILDE)?;
    let est = estimate_trace(&trace, &inj, &p, &EstimatorConfig::default())?;
    let summary = error_summary(&trace, &est, settle);
    write_out(&cfg.out_file("estimates.csv"), estimates_csv(&trace, &est).as_bytes())?;
    write_out(
        &cfg.out_file("estimate_summary.toml"),
        summary.to_toml(settle).as_bytes(),
    )?;
    Ok(summary)
}

/// Locked-rotor sweep on the configured motor as plant. Writes
/// `id_report.toml`, `id_curves.csv`, `id_points.csv` and
/// `identified_motor.toml`.
pub fn cmd_identify(cfg: &RunConfig) -> Result<IdReport, HarnessError> {
    let u = cfg.u_tilde.or(cfg.motor.id_u_tilde).unwrap_or(DEFAULT_U_TILDE);
    if !(u > 0.0) || !u.is_finite() {
        return Err(HarnessError::Usage(format!("--u-tilde must be > 0, got {u}")));
    }
    let mut sweep = IdSweep::new(u);
    sweep.omega_inj = std::f64::consts::TAU * cfg.omega_inj_hz;
    sweep.experiment.sim = cfg.sim_options()?;
    sweep.experiment.sim.noise_std = 0.0;
    let report = identify_full(&cfg.motor.params, &sweep)?;
    write_out(&cfg.out_file("id_report.toml"), report.to_toml().as_bytes())?;
    write_out(&cfg.out_file("id_curves.csv"), report.curves_csv().as_bytes())?;
    write_out(&cfg.out_file("id_points.csv"), report.points_csv().as_bytes())?;
    let name = format!("{}-identified", cfg.motor.name);
    write_out(
        &cfg.out_file("identified_motor.toml"),
        motor_to_toml(&name, &report.params, Some(u)).as_bytes(),
    )?;
    Ok(report)
}

/// Injected runs at `Ω` and `2Ω` compared with the uninjected run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AveragingReport {
    pub omega_inj: f64,
    /// `max |θ_inj − θ_0|` at `Ω` and `2Ω` (rad).
    pub theta_dev: [f64; 2],
    pub theta_ratio: f64,
    /// Largest deviation of the flux ripple from `(ũ/Ω) F(Ωt)` after the
    /// per-period mean is removed, at `Ω` and `2Ω` (Wb).
    pub ripple_residual: [f64; 2],
    pub residual_ratio: f64,
    /// Half peak-to-peak flux ripple along `ũ` over the last period at `Ω` (Wb).
    pub ripple_amplitude: f64,
    /// `‖ũ‖/Ω · max F` (Wb).
    pub ripple_expected: f64,
    pub ripple_rel_error: f64,
}

impl AveragingReport {
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("omega_inj", self.omega_inj),
            ("theta_dev_omega", self.theta_dev[0]),
            ("theta_dev_2omega", self.theta_dev[1]),
            ("theta_ratio", self.theta_ratio),
            ("ripple_residual_omega", self.ripple_residual[0]),
            ("ripple_residual_2omega", self.ripple_residual[1]),
            ("residual_ratio", self.residual_ratio),
            ("ripple_amplitude", self.ripple_amplitude),
            ("ripple_expected", self.ripple_expected),
            ("ripple_rel_error", self.ripple_rel_error),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_sig9(v));
        }
        s
    }
}

struct AveragingRun {
    t: Vec<f64>,
    theta: Vec<f64>,
    /// Controller-frame flux.
    phi: Vec<Vec2>,
}

fn averaging_run(
    profile: &ScenarioProfile,
    inj: &InjectionConfig,
    p: &MotorParams,
    opts: &SimOptions,
) -> Result<AveragingRun, ScenarioError> {
    // Start on the averaged trajectory: rest plus the ripple offset at t = 0.
    let initial = MotorState {
        phi: inj.u_tilde * (inj.F(0.0) / inj.omega_inj),
        ..MotorState::at_rest()
    };
    let mut run = AveragingRun {
        t: Vec::new(),
        theta: Vec::new(),
        phi: Vec::new(),
    };
    simulate_from(profile, inj, p, opts, initial, |s| {
        run.t.push(s.t);
        run.theta.push(s.state.theta);
        run.phi.push(rotate(s.state.phi, s.state.theta - s.theta_c));
    })?;
    Ok(run)
}

/// Runs `profile` without injection and with `inj` at `Ω` and `2Ω`, all
/// sampled at every integration step of the `Ω` run.
pub fn averaging_check(
    profile: &ScenarioProfile,
    inj: &InjectionConfig,
    p: &MotorParams,
    steps_per_period: u32,
) -> Result<AveragingReport, ScenarioError> {
    let opts = SimOptions {
        sample_rate: inj.frequency() * steps_per_period as f64,
        steps_per_period,
        ..SimOptions::default()
    };
    let mut theta_dev = [0.0; 2];
    let mut ripple_residual = [0.0; 2];
    let mut amplitude = 0.0;
    for (k, scale) in [1.0, 2.0].into_iter().enumerate() {
        let fast = InjectionConfig {
            omega_inj: inj.omega_inj * scale,
            ..inj.clone()
        };
        let off = InjectionConfig {
            u_tilde: Vec2::ZERO,
            ..fast.clone()
        };
        let with = averaging_run(profile, &fast, p, &opts)?;
        let without = averaging_run(profile, &off, p, &opts)?;
        theta_dev[k] = with
            .theta
            .iter()
            .zip(&without.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let ripple_ref = |t: f64| fast.u_tilde * (fast.F(fast.omega_inj * t) / fast.omega_inj);
        let d: Vec<Vec2> = with.phi.iter().zip(&without.phi).map(|(a, b)| *a - *b).collect();
        let n_per = steps_per_period as usize / scale as usize;
        for start in (0..d.len().saturating_sub(n_per)).step_by(n_per) {
            if with.t[start] < profile.settle {
                continue;
            }
            let block: Vec<Vec2> = (start..start + n_per).map(|j| d[j] - ripple_ref(with.t[j])).collect();
            let mean = block.iter().fold(Vec2::ZERO, |a, v| a + *v) * (1.0 / n_per as f64);
            for v in block {
                ripple_residual[k] = f64::max(ripple_residual[k], (v - mean).norm());
            }
        }
        if k == 0 {
            let dir = inj.u_tilde * (1.0 / inj.u_tilde.norm().max(f64::MIN_POSITIVE));
            let last = d.len() - 1;
            let proj: Vec<f64> = d[last - n_per..=last].iter().map(|v| v.dot(dir)).collect();
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            amplitude = 0.5 * (hi - lo);
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let expected = inj.u_tilde.norm() / inj.omega_inj * inj.waveform.primitive_max();
    Ok(AveragingReport {
        omega_inj: inj.omega_inj,
        theta_dev,
        theta_ratio: ratio(theta_dev[0], theta_dev[1]),
        ripple_residual,
        residual_ratio: ratio(ripple_residual[0], ripple_residual[1]),
        ripple_amplitude: amplitude,
        ripple_expected: expected,
        ripple_rel_error: if expected > 0.0 {
            (amplitude - expected).abs() / expected
        } else {
            0.0
        },
    })
}

/// Integration steps per injection period in the averaging check.
pub const AVERAGING_STEPS_PER_PERIOD: u32 = 40;

/// Averaging check on the configured scenario (default `load-step`); writes
/// `averaging.toml`.
pub fn cmd_averaging_check(cfg: &RunConfig) -> Result<AveragingReport, HarnessError> {
    let profile = cfg.scenario_profile("load-step")?;
    let inj = cfg.injection(DEFAULT_U_TILDE)?;
    let report = averaging_check(&profile, &inj, &cfg.motor.params, AVERAGING_STEPS_PER_PERIOD)?;
    write_out(&cfg.out_file("averaging.toml"), report.to_toml().as_bytes())?;
    Ok(report)
}
