//! Locked-rotor identification of the magnetic model.
//!
//! The rotor is held at `θ = 0` and driven with `ū + ũ f(Ωt)`. At steady state
//! the demodulated ripple satisfies `ĩ = DI(φ̄) φ̃`, with `φ̄ = I⁻¹(ī)` and
//! `φ̃ ≈ ũ/Ω`. The entries of `DI` are linear in the saturation coefficients,
//! so each family of experiments gives a linear least-squares fit.
//!
//! | family | DC | injection | fits |
//! |---|---|---|---|
//! | inductances | `ū = 0` | d, then q | `Ld`, `Lq` |
//! | d axis | `ū_d` | d | `a30`, `a40` from `G_dd` |
//! | cross | `ū_q` | d | `a22` from `G_dd`, `a12` from `G_qd` |
//! | q axis | `ū_q` | q | `a12` from `G_dq`, `a04` from `G_qq` |

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::demod::{demodulate, DemodConfig, DemodError};
use crate::injection::{InjectionConfig, Waveform, DEFAULT_OMEGA_INJ};
use crate::lstsq::{lstsq, LstsqError};
use crate::magnetics::{
    current_from_flux, flux_from_current_exact, hessian, MagneticsError, MotorParams, NormalizedSaturation,
    DEFAULT_INVERSION_TOL,
};
use crate::scenario::{Grid, ScenarioError, SimOptions};
use crate::sim::{locked_rotor_step_with, SimError};
use crate::trace::fmt_sig9;
use crate::vec2::{CurrentDQ, FluxDQ, Vec2, Voltage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdError {
    #[error("experiment ū = ({}, {}) V did not settle: ī changed by {change:.2e} (relative) over five periods; increase the settle time", u_bar.x, u_bar.y)]
    NotSettled { u_bar: Voltage, change: f64 },
    #[error("{family} fit: {reason}")]
    Design { family: &'static str, reason: String },
    #[error("{family} fit: {source}")]
    Lstsq { family: &'static str, source: LstsqError },
    #[error("ripple component below the numeric floor in {0}")]
    NoRipple(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Demod(#[from] DemodError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
}

/// Reference for the flux ripple amplitude `φ̃` in `ĩ = G φ̃`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RippleReference {
    /// Commanded `ũ/Ω`.
    Commanded,
    /// Ripple of `∫(u − R i) dt` demodulated like the current. Removes the
    /// resistive attenuation of the flux ripple.
    #[default]
    MeasuredFlux,
}

impl RippleReference {
    pub fn name(self) -> &'static str {
        match self {
            RippleReference::Commanded => "commanded",
            RippleReference::MeasuredFlux => "measured-flux",
        }
    }
}

/// One sample of the final demodulation window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSample {
    /// Trapezoid weight (s).
    pub weight: f64,
    /// `F(Ωt)`.
    pub f: f64,
    /// `∫(u − R i) dt` with its window mean removed (Wb).
    pub psi: FluxDQ,
}

/// Steady-state result of one locked-rotor experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct IdPoint {
    /// DC voltage (V).
    pub u_bar: Voltage,
    /// Injection amplitude (V).
    pub u_tilde: Voltage,
    pub omega_inj: f64,
    pub i_bar: CurrentDQ,
    pub i_tilde: CurrentDQ,
    /// Demodulated ripple of `∫(u − R i) dt` (Wb).
    pub phi_tilde: FluxDQ,
    /// Samples of the last window; empty for points not produced by a
    /// simulation.
    pub window: Vec<WindowSample>,
}

impl IdPoint {
    /// True when the injection is along q.
    pub fn injection_axis_is_q(&self) -> bool {
        self.u_tilde.y.abs() > self.u_tilde.x.abs()
    }

    pub fn flux_ripple(&self, reference: RippleReference) -> FluxDQ {
        match reference {
            RippleReference::Commanded => self.u_tilde * (1.0 / self.omega_inj),
            RippleReference::MeasuredFlux => self.phi_tilde,
        }
    }
}

/// Settings of a single experiment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOptions {
    /// Settling time (s); `None` uses ten electrical time constants.
    pub settle: Option<f64>,
    pub sim: SimOptions,
    /// Initial flux; `None` starts on the averaged steady trajectory.
    pub initial_flux: Option<FluxDQ>,
}

/// Relative change of `ī` over five periods accepted as steady.
pub const STEADY_TOL: f64 = 1e-4;
const STEADY_PERIODS: usize = 5;

/// Ten times the slower electrical time constant `max(Ld, Lq)/R`.
pub fn default_settle(p: &MotorParams) -> f64 {
    10.0 * p.ld.max(p.lq) / p.r
}

/// Runs one locked-rotor experiment with `u = ū + ũ f(Ωt)` and demodulates
/// the steady tail.
pub fn run_id_experiment(
    u_bar: Voltage,
    inj: &InjectionConfig,
    p: &MotorParams,
    opts: &ExperimentOptions,
) -> Result<IdPoint, IdError> {
    let period = inj.period();
    let settle = opts.settle.unwrap_or_else(|| default_settle(p));
    let dc = DemodConfig::new(inj, opts.sim.sample_rate)?;
    let n_per = dc.samples_per_period;
    // Settle, then one window plus five periods of comparison.
    let settle_samples = ((settle / period).ceil() as usize) * n_per;
    let total = settle_samples + (STEADY_PERIODS + 1) * n_per + 1;
    let duration = (total - 1) as f64 / opts.sim.sample_rate;
    let grid = Grid::new(duration, inj, &opts.sim)?;

    let mut phi = match opts.initial_flux {
        Some(phi) => phi,
        None => {
            flux_from_current_exact(u_bar * (1.0 / p.r), p, DEFAULT_INVERSION_TOL)?
                + inj.u_tilde * (inj.F(0.0) / inj.omega_inj)
        }
    };
    let square = inj.waveform.is_square();
    let voltage = |t: f64| inj.injected_voltage(t, u_bar);

    let mut times = Vec::with_capacity(grid.samples);
    let mut currents = Vec::with_capacity(grid.samples);
    let mut volts = Vec::with_capacity(grid.samples);
    for j in 0..grid.samples {
        let t = j as f64 / opts.sim.sample_rate;
        times.push(t);
        currents.push(current_from_flux(phi, p));
        volts.push(voltage(t));
        if j + 1 == grid.samples {
            break;
        }
        for k in 0..grid.steps_per_sample {
            let t0 = (j * grid.steps_per_sample + k) as f64 * grid.dt;
            phi = locked_rotor_step_with(phi, t0, grid.dt, p, |st| {
                voltage(if square { st.step_mid() } else { st.t })
            })?;
        }
    }

    // ∫(u − R i): square levels hold over a sample interval, the rest is
    // trapezoidal.
    let h = 1.0 / opts.sim.sample_rate;
    let mut psi = Vec::with_capacity(times.len());
    let mut acc = Vec2::ZERO;
    psi.push(acc);
    for k in 1..times.len() {
        let u = if square {
            volts[k - 1]
        } else {
            (volts[k - 1] + volts[k]) * 0.5
        };
        acc += (u - (currents[k - 1] + currents[k]) * (0.5 * p.r)) * h;
        psi.push(acc);
    }

    let last = times.len() - 1;
    let first = last + 1 - dc.window_len();
    let mut window: Vec<WindowSample> = (first..=last)
        .map(|k| WindowSample {
            weight: if k == first || k == last { 0.5 * h } else { h },
            f: inj.F(inj.omega_inj * times[k]),
            psi: psi[k],
        })
        .collect();
    let w_sum: f64 = window.iter().map(|s| s.weight).sum();
    let psi_mean = window.iter().fold(Vec2::ZERO, |a, s| a + s.psi * s.weight) * (1.0 / w_sum);
    for s in &mut window {
        s.psi -= psi_mean;
    }
    let earlier = last - STEADY_PERIODS * n_per;
    let d_i = demodulate(&times, &currents, &dc)?;
    let d_psi = demodulate(&times, &psi, &dc)?;
    let (end, prev) = (d_i[last].expect("full window"), d_i[earlier].expect("full window"));
    let scale = end.i_bar.norm().max(end.i_tilde.norm());
    let change = (end.i_bar - prev.i_bar).norm() / scale;
    if !(change < STEADY_TOL) {
        return Err(IdError::NotSettled { u_bar, change });
    }
    Ok(IdPoint {
        u_bar,
        u_tilde: inj.u_tilde,
        omega_inj: inj.omega_inj,
        i_bar: end.i_bar,
        i_tilde: end.i_tilde,
        phi_tilde: d_psi[last].expect("full window").i_tilde,
        window,
    })
}

/// Result of one linear regression.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    pub residual_norm: f64,
    pub points: usize,
    /// Relative disagreement between the QR and normal-equation solutions.
    pub solver_disagreement: f64,
}

fn fit(family: &'static str, rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<LinearFit, IdError> {
    let points = rows.len();
    let s = lstsq(&rows, &y).map_err(|source| IdError::Lstsq { family, source })?;
    Ok(LinearFit {
        coef: s.coef,
        residual_norm: s.residual_norm,
        points,
        solver_disagreement: s.disagreement,
    })
}

/// Operating point used to build the regressors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Linearization {
    /// `φ̄ = (Ld ī_d, Lq ī_q)`: the regressions are the first-order
    /// admittance formulas.
    #[default]
    FirstOrder,
    /// `φ̄ = I⁻¹(ī)`: the regressions are the exact second derivatives of the
    /// energy at the operating point.
    Exact,
    /// The model current is demodulated along the flux trajectory of the
    /// window, `φ̄ + ψ(t_j)`, with `φ̄` chosen so that its mean matches `ī`.
    /// Accounts for the finite ripple amplitude.
    Waveform,
}

impl Linearization {
    pub fn name(self) -> &'static str {
        match self {
            Linearization::FirstOrder => "first-order",
            Linearization::Exact => "exact",
            Linearization::Waveform => "waveform",
        }
    }
}

/// Saturation coefficients in the order a30, a12, a40, a22, a04.
fn alphas(p: &MotorParams) -> [f64; 5] {
    [p.a30, p.a12, p.a40, p.a22, p.a04]
}

/// Gradients of the saturation monomials of the energy.
fn monomial_gradients(phi: FluxDQ) -> [Vec2; 5] {
    let (d, q) = (phi.x, phi.y);
    [
        Vec2::new(3.0 * d * d, 0.0),
        Vec2::new(q * q, 2.0 * d * q),
        Vec2::new(4.0 * d * d * d, 0.0),
        Vec2::new(2.0 * d * q * q, 2.0 * d * d * q),
        Vec2::new(0.0, 4.0 * q * q * q),
    ]
}

/// Hessians of the saturation monomials, as `(dd, dq, qq)`.
fn monomial_hessians(phi: FluxDQ) -> [[f64; 3]; 5] {
    let (d, q) = (phi.x, phi.y);
    [
        [6.0 * d, 0.0, 0.0],
        [0.0, 2.0 * q, 2.0 * d],
        [12.0 * d * d, 0.0, 0.0],
        [2.0 * q * q, 4.0 * d * q, 2.0 * d * d],
        [0.0, 0.0, 12.0 * q * q],
    ]
}

/// Model of `ĩ / φ̃_inj` at one point:
/// `(lin.x / Ld, lin.y / Lq) + Σ_k α_k alpha[k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Regressors {
    lin: Vec2,
    alpha: [Vec2; 5],
}

impl Regressors {
    fn predict(&self, p: &MotorParams) -> Vec2 {
        let mut g = Vec2::new(self.lin.x / p.ld, self.lin.y / p.lq);
        for (a, r) in alphas(p).iter().zip(&self.alpha) {
            g += *r * *a;
        }
        g
    }
}

fn regressors(
    pt: &IdPoint,
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
) -> Result<Regressors, IdError> {
    let q_inj = pt.injection_axis_is_q();
    match lin {
        Linearization::FirstOrder | Linearization::Exact => {
            let phi = match lin {
                Linearization::FirstOrder => Vec2::new(guess.ld * pt.i_bar.x, guess.lq * pt.i_bar.y),
                _ => flux_from_current_exact(pt.i_bar, guess, DEFAULT_INVERSION_TOL)?,
            };
            let pick = |h: [f64; 3]| {
                if q_inj {
                    Vec2::new(h[1], h[2])
                } else {
                    Vec2::new(h[0], h[1])
                }
            };
            Ok(Regressors {
                lin: if q_inj {
                    Vec2::new(0.0, 1.0)
                } else {
                    Vec2::new(1.0, 0.0)
                },
                alpha: monomial_hessians(phi).map(pick),
            })
        }
        Linearization::Waveform => {
            if pt.window.is_empty() {
                return Err(IdError::Design {
                    family: "waveform",
                    reason: "point carries no window samples".into(),
                });
            }
            let w_sum: f64 = pt.window.iter().map(|s| s.weight).sum();
            let f_mean = pt.window.iter().map(|s| s.weight * s.f).sum::<f64>() / w_sum;
            let psi: Vec<FluxDQ> = match reference {
                RippleReference::MeasuredFlux => pt.window.iter().map(|s| s.psi).collect(),
                RippleReference::Commanded => pt
                    .window
                    .iter()
                    .map(|s| pt.u_tilde * ((s.f - f_mean) / pt.omega_inj))
                    .collect(),
            };
            // Newton for the mean flux whose window-averaged current is ī.
            let mut c = flux_from_current_exact(pt.i_bar, guess, DEFAULT_INVERSION_TOL)?;
            for _ in 0..50 {
                let mut i_avg = Vec2::ZERO;
                let mut jac = crate::vec2::SymMatrix2::new(0.0, 0.0, 0.0);
                for (s, y) in pt.window.iter().zip(&psi) {
                    let phi = c + *y;
                    i_avg += current_from_flux(phi, guess) * s.weight;
                    let h = hessian(phi, guess);
                    jac = crate::vec2::SymMatrix2::new(
                        jac.dd + s.weight * h.dd,
                        jac.dq + s.weight * h.dq,
                        jac.qq + s.weight * h.qq,
                    );
                }
                let r = i_avg * (1.0 / w_sum) - pt.i_bar;
                let jac = crate::vec2::SymMatrix2::new(jac.dd / w_sum, jac.dq / w_sum, jac.qq / w_sum);
                let delta = jac
                    .solve(r)
                    .ok_or(MagneticsError::OutsideValidity { current: pt.i_bar })?;
                c -= delta;
                if delta.norm() <= 1e-15 * (c.norm() + guess.ld * guess.i_n) {
                    break;
                }
            }
            let phi_t = ripple_component(pt, reference, "waveform regressors")?;
            let norm = pt.window.iter().map(|s| s.weight * s.f * s.f).sum::<f64>() * phi_t;
            let mut out = Regressors {
                lin: Vec2::ZERO,
                alpha: [Vec2::ZERO; 5],
            };
            for (s, y) in pt.window.iter().zip(&psi) {
                let phi = c + *y;
                let k = s.weight * s.f / norm;
                out.lin += phi * k;
                for (a, g) in out.alpha.iter_mut().zip(monomial_gradients(phi)) {
                    *a += g * k;
                }
            }
            Ok(out)
        }
    }
}

fn ripple_component(pt: &IdPoint, reference: RippleReference, what: &'static str) -> Result<f64, IdError> {
    let phi = pt.flux_ripple(reference);
    let v = if pt.injection_axis_is_q() { phi.y } else { phi.x };
    if !(v.abs() > 1e-12 * phi.norm()) {
        return Err(IdError::NoRipple(what));
    }
    Ok(v)
}

/// Measured `ĩ / φ̃_inj`.
fn measured_admittance(pt: &IdPoint, reference: RippleReference, what: &'static str) -> Result<Vec2, IdError> {
    Ok(pt.i_tilde * (1.0 / ripple_component(pt, reference, what)?))
}

/// Fits the coefficients `unknown` to component `comp` of `ĩ/φ̃_inj`, with
/// the inductances and the other coefficients taken from `guess`.
fn fit_relation(
    family: &'static str,
    points: &[IdPoint],
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
    comp: usize,
    unknown: &[usize],
) -> Result<LinearFit, IdError> {
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    for pt in points {
        let reg = regressors(pt, guess, lin, reference)?;
        let g = measured_admittance(pt, reference, family)?;
        let pick = |v: Vec2| if comp == 0 { v.x } else { v.y };
        let base = Regressors {
            alpha: std::array::from_fn(|k| if unknown.contains(&k) { Vec2::ZERO } else { reg.alpha[k] }),
            ..reg
        };
        rows.push(unknown.iter().map(|&k| pick(reg.alpha[k])).collect());
        y.push(pick(g) - pick(base.predict(guess)));
    }
    fit(family, rows, y)
}

/// `Ld = φ̃_d/ĩ_d` and `Lq = φ̃_q/ĩ_q` from `ū = 0` experiments, averaged.
pub fn estimate_ld_lq(points: &[IdPoint], reference: RippleReference) -> Result<(f64, f64), IdError> {
    refine_ld_lq(
        points,
        &MotorParams::linear(1.0, 1, 0.0, 1.0, 1.0, 1.0, 1.0),
        Linearization::FirstOrder,
        reference,
    )
}

/// Inductances from the `ū = 0` points with the saturation terms of `guess`
/// removed.
fn refine_ld_lq(
    points: &[IdPoint],
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
) -> Result<(f64, f64), IdError> {
    let (mut ld, mut lq) = (Vec::new(), Vec::new());
    for pt in points {
        let q_inj = pt.injection_axis_is_q();
        let g = measured_admittance(pt, reference, if q_inj { "Lq" } else { "Ld" })?;
        let reg = regressors(pt, guess, lin, reference)?;
        let mut sat = Vec2::ZERO;
        for (a, r) in alphas(guess).iter().zip(&reg.alpha) {
            sat += *r * *a;
        }
        let (gi, li) = if q_inj {
            (g.y - sat.y, reg.lin.y)
        } else {
            (g.x - sat.x, reg.lin.x)
        };
        if !(gi > 0.0) {
            return Err(IdError::NoRipple(if q_inj { "Lq" } else { "Ld" }));
        }
        if q_inj {
            lq.push(li / gi)
        } else {
            ld.push(li / gi)
        }
    }
    if ld.is_empty() || lq.is_empty() {
        return Err(IdError::Design {
            family: "inductance",
            reason: "need at least one d-injection and one q-injection point".into(),
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&ld), mean(&lq)))
}

fn levels_text(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

/// `(a30, a40)` from `G_dd − 1/Ld = 6 a30 φ_d + 12 a40 φ_d²` on points with
/// `ū_q = 0` and d-axis injection.
pub fn fit_d_axis(
    points: &[IdPoint],
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
) -> Result<LinearFit, IdError> {
    let i_d: Vec<f64> = points.iter().map(|p| p.i_bar.x).collect();
    if distinct_count(&i_d) < 3 || !i_d.iter().any(|v| *v > 0.0) || !i_d.iter().any(|v| *v < 0.0) {
        return Err(IdError::Design {
            family: "d-axis",
            reason: format!("need >= 3 distinct ī_d of both signs, got [{}]", levels_text(&i_d)),
        });
    }
    fit_relation("d-axis", points, guess, lin, reference, 0, &[0, 2]).map_err(|e| match e {
        IdError::Lstsq {
            family,
            source: LstsqError::RankDeficient { .. },
        } => IdError::Design {
            family,
            reason: format!("rank-deficient design for ī_d = [{}]", levels_text(&i_d)),
        },
        e => e,
    })
}

fn check_q_levels(family: &'static str, points: &[IdPoint]) -> Result<(), IdError> {
    let i_q: Vec<f64> = points.iter().map(|p| p.i_bar.y).collect();
    let magnitudes: Vec<f64> = i_q.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    if distinct_count(&magnitudes) < 2 {
        return Err(IdError::Design {
            family,
            reason: format!("need >= 2 distinct non-zero |ī_q|, got [{}]", levels_text(&i_q)),
        });
    }
    Ok(())
}

/// Cross-saturation fits on points with `ū_d = 0` and d-axis injection:
/// `a22` from `G_dd` and `a12` from `G_qd`.
pub fn fit_cross_terms(
    points: &[IdPoint],
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
) -> Result<(LinearFit, LinearFit), IdError> {
    check_q_levels("cross", points)?;
    Ok((
        fit_relation("cross a22", points, guess, lin, reference, 0, &[3])?,
        fit_relation("cross a12", points, guess, lin, reference, 1, &[1])?,
    ))
}

/// q-axis fits on points with `ū_d = 0` and q-axis injection: `a12` from
/// `G_dq` and `a04` from `G_qq`.
pub fn fit_q_axis(
    points: &[IdPoint],
    guess: &MotorParams,
    lin: Linearization,
    reference: RippleReference,
) -> Result<(LinearFit, LinearFit), IdError> {
    check_q_levels("q-axis", points)?;
    Ok((
        fit_relation("q-axis a12", points, guess, lin, reference, 0, &[1])?,
        fit_relation("q-axis a04", points, guess, lin, reference, 1, &[4])?,
    ))
}

fn distinct_count(v: &[f64]) -> usize {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12));
    s.len()
}

/// How far the regressions are iterated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FitMode {
    /// One pass with first-order regressors.
    FirstOrder,
    /// The first-order pass, then repeated fits with regressors evaluated
    /// under the previous estimate along the window flux trajectory, until
    /// the estimate stops changing.
    #[default]
    Refined,
}

/// Sweep and fitting settings.
#[derive(Clone, Debug, PartialEq)]
pub struct IdSweep {
    /// DC current levels as multiples of `In`.
    pub levels: Vec<f64>,
    /// Injection amplitude (V).
    pub u_tilde: f64,
    pub omega_inj: f64,
    pub waveform: Waveform,
    pub experiment: ExperimentOptions,
    pub reference: RippleReference,
    pub mode: FitMode,
    pub max_iterations: usize,
}

impl IdSweep {
    /// Nine levels from −2 to +2 `In`.
    pub fn new(u_tilde: f64) -> Self {
        Self {
            levels: (0..9).map(|k| -2.0 + 0.5 * k as f64).collect(),
            u_tilde,
            omega_inj: DEFAULT_OMEGA_INJ,
            waveform: Waveform::Square,
            experiment: ExperimentOptions::default(),
            reference: RippleReference::default(),
            mode: FitMode::default(),
            max_iterations: 50,
        }
    }
}

/// Summary of one regression in the report.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub name: &'static str,
    pub residual_norm: f64,
    pub points: usize,
    pub solver_disagreement: f64,
}

/// Which experiment family a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Inductance,
    DAxis,
    Cross,
    QAxis,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Inductance => "inductance",
            Family::DAxis => "d-axis",
            Family::Cross => "cross",
            Family::QAxis => "q-axis",
        }
    }
}

/// Fitted magnetic model and fit diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct IdReport {
    /// Plant constants with the fitted magnetic parameters; `a12` is the
    /// mean of its two estimates.
    pub params: MotorParams,
    pub a12_cross: f64,
    pub a12_q: f64,
    /// `|a12_cross − a12_q| / |mean|`.
    pub a12_spread: f64,
    pub warning: Option<String>,
    pub fits: Vec<FitSummary>,
    pub iterations: usize,
    pub mode: FitMode,
    /// Regressors of the final pass.
    pub linearization: Linearization,
    pub reference: RippleReference,
    pub points: Vec<(Family, IdPoint)>,
}

/// Disagreement between the two `a12` estimates that triggers a warning.
pub const A12_WARN_SPREAD: f64 = 0.10;

impl IdReport {
    pub fn normalized(&self) -> NormalizedSaturation {
        self.params.normalized_saturation()
    }

    /// Normalized `a12` products of the two separate estimates.
    pub fn a12_normalized(&self) -> (f64, f64) {
        let k = self.params.ld * self.params.lq * self.params.i_n;
        (self.a12_cross * k, self.a12_q * k)
    }

    /// Key-value report.
    pub fn to_toml(&self) -> String {
        let p = &self.params;
        let n = self.normalized();
        let (x12, q12) = self.a12_normalized();
        let mut s = String::new();
        let _ = writeln!(s, "Ld = {}", fmt_sig9(p.ld));
        let _ = writeln!(s, "Lq = {}", fmt_sig9(p.lq));
        for (k, v) in [
            ("a30", p.a30),
            ("a12", p.a12),
            ("a40", p.a40),
            ("a22", p.a22),
            ("a04", p.a04),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_sig9(v));
        }
        for (k, v) in [
            ("a30_norm", n.a30),
            ("a12_norm", n.a12),
            ("a40_norm", n.a40),
            ("a22_norm", n.a22),
            ("a04_norm", n.a04),
            ("a12_cross_norm", x12),
            ("a12_q_norm", q12),
            ("a12_spread", self.a12_spread),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_sig9(v));
        }
        let _ = writeln!(
            s,
            "mode = \"{}\"",
            match self.mode {
                FitMode::FirstOrder => "first-order",
                FitMode::Refined => "refined",
            }
        );
        let _ = writeln!(s, "linearization = \"{}\"", self.linearization.name());
        let _ = writeln!(s, "ripple_reference = \"{}\"", self.reference.name());
        let _ = writeln!(s, "iterations = {}", self.iterations);
        if let Some(w) = &self.warning {
            let _ = writeln!(s, "warning = {:?}", w);
        }
        for f in &self.fits {
            let _ = writeln!(s, "\n[fit.\"{}\"]", f.name);
            let _ = writeln!(s, "residual_norm = {}", fmt_sig9(f.residual_norm));
            let _ = writeln!(s, "points = {}", f.points);
            let _ = writeln!(s, "solver_disagreement = {}", fmt_sig9(f.solver_disagreement));
        }
        s
    }

    /// Measured and fitted admittance entries per experiment (1/H).
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("family,relation,i_bar_d,i_bar_q,measured,fitted\n");
        for (family, pt) in &self.points {
            let (Ok(reg), Ok(g)) = (
                regressors(pt, &self.params, self.linearization, self.reference),
                measured_admittance(pt, self.reference, "curves"),
            ) else {
                continue;
            };
            let fitted = reg.predict(&self.params);
            let rows: Vec<(&str, f64, f64)> = match (family, pt.injection_axis_is_q()) {
                (Family::Inductance, false) | (Family::DAxis, _) => vec![("G_dd", g.x, fitted.x)],
                (Family::Inductance, true) => vec![("G_qq", g.y, fitted.y)],
                (Family::Cross, _) => vec![("G_dd", g.x, fitted.x), ("G_qd", g.y, fitted.y)],
                (Family::QAxis, _) => vec![("G_dq", g.x, fitted.x), ("G_qq", g.y, fitted.y)],
            };
            for (rel, measured, fitted) in rows {
                let _ = writeln!(
                    s,
                    "{},{rel},{},{},{},{}",
                    family.name(),
                    fmt_sig9(pt.i_bar.x),
                    fmt_sig9(pt.i_bar.y),
                    fmt_sig9(measured),
                    fmt_sig9(fitted)
                );
            }
        }
        s
    }

    /// Raw experiment results.
    pub fn points_csv(&self) -> String {
        let mut s = String::from(
            "family,u_bar_d,u_bar_q,u_tilde_d,u_tilde_q,i_bar_d,i_bar_q,i_tilde_d,i_tilde_q,phi_tilde_d,phi_tilde_q\n",
        );
        for (family, pt) in &self.points {
            let vals = [
                pt.u_bar.x,
                pt.u_bar.y,
                pt.u_tilde.x,
                pt.u_tilde.y,
                pt.i_bar.x,
                pt.i_bar.y,
                pt.i_tilde.x,
                pt.i_tilde.y,
                pt.phi_tilde.x,
                pt.phi_tilde.y,
            ];
            let _ = write!(s, "{}", family.name());
            for v in vals {
                let _ = write!(s, ",{}", fmt_sig9(v));
            }
            s.push('\n');
        }
        s
    }
}

/// Experiment plan of a sweep: `(family, ū, ũ)`.
pub fn sweep_plan(plant: &MotorParams, sweep: &IdSweep) -> Vec<(Family, Voltage, Voltage)> {
    let ud = Vec2::new(sweep.u_tilde, 0.0);
    let uq = Vec2::new(0.0, sweep.u_tilde);
    let dc = |l: f64| l * plant.r * plant.i_n;
    let mut plan = vec![
        (Family::Inductance, Vec2::ZERO, ud),
        (Family::Inductance, Vec2::ZERO, uq),
    ];
    plan.extend(sweep.levels.iter().map(|&l| (Family::DAxis, Vec2::new(dc(l), 0.0), ud)));
    plan.extend(sweep.levels.iter().map(|&l| (Family::Cross, Vec2::new(0.0, dc(l)), ud)));
    plan.extend(sweep.levels.iter().map(|&l| (Family::QAxis, Vec2::new(0.0, dc(l)), uq)));
    plan
}

/// Runs the sweep on a simulated plant (in parallel) and fits the model.
pub fn identify_full(plant: &MotorParams, sweep: &IdSweep) -> Result<IdReport, IdError> {
    let plan = sweep_plan(plant, sweep);
    let points = plan
        .par_iter()
        .map(|&(family, u_bar, u_tilde)| {
            let inj = InjectionConfig {
                omega_inj: sweep.omega_inj,
                u_tilde,
                waveform: sweep.waveform.clone(),
            };
            run_id_experiment(u_bar, &inj, plant, &sweep.experiment).map(|pt| (family, pt))
        })
        .collect::<Result<Vec<_>, _>>()?;
    fit_points(plant, &points, sweep)
}

/// Fits the model to already collected points.
pub fn fit_points(plant: &MotorParams, points: &[(Family, IdPoint)], sweep: &IdSweep) -> Result<IdReport, IdError> {
    let family =
        |f: Family| -> Vec<IdPoint> { points.iter().filter(|(g, _)| *g == f).map(|(_, p)| p.clone()).collect() };
    let l_pts = family(Family::Inductance);
    let (ld, lq) = estimate_ld_lq(&l_pts, sweep.reference)?;
    let (d_pts, x_pts, q_pts) = (family(Family::DAxis), family(Family::Cross), family(Family::QAxis));
    let refined_lin = if points.iter().all(|(_, p)| !p.window.is_empty()) {
        Linearization::Waveform
    } else {
        Linearization::Exact
    };

    let mut guess = MotorParams {
        ld,
        lq,
        ..plant.without_saturation()
    };
    let mut lin = Linearization::FirstOrder;
    let mut iterations = 0;
    let mut converged;
    let max_iter = match sweep.mode {
        FitMode::FirstOrder => 1,
        FitMode::Refined => sweep.max_iterations.max(2),
    };
    let (mut fd, mut fx22, mut fx12, mut fq12, mut fq04);
    let mut a12_pair;
    loop {
        if lin == Linearization::Waveform {
            (guess.ld, guess.lq) = refine_ld_lq(&l_pts, &guess, lin, sweep.reference)?;
        }
        fd = fit_d_axis(&d_pts, &guess, lin, sweep.reference)?;
        (fx22, fx12) = fit_cross_terms(&x_pts, &guess, lin, sweep.reference)?;
        (fq12, fq04) = fit_q_axis(&q_pts, &guess, lin, sweep.reference)?;
        a12_pair = (fx12.coef[0], fq12.coef[0]);
        let next = MotorParams {
            a30: fd.coef[0],
            a40: fd.coef[1],
            a22: fx22.coef[0],
            a12: 0.5 * (a12_pair.0 + a12_pair.1),
            a04: fq04.coef[0],
            ..guess
        };
        iterations += 1;
        let change = next
            .normalized_saturation()
            .as_array()
            .iter()
            .zip(guess.normalized_saturation().as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let previous = std::mem::replace(&mut guess, next);
        let l_change = ((guess.ld - previous.ld) / guess.ld)
            .abs()
            .max(((guess.lq - previous.lq) / guess.lq).abs());
        converged = iterations > 1 && change.max(l_change) < 1e-12;
        if iterations >= max_iter || converged {
            break;
        }
        lin = refined_lin;
    }
    let mean = 0.5 * (a12_pair.0 + a12_pair.1);
    let a12_spread = if mean != 0.0 {
        (a12_pair.0 - a12_pair.1).abs() / mean.abs()
    } else {
        0.0
    };
    let mut warnings = Vec::new();
    if a12_spread > A12_WARN_SPREAD {
        warnings.push(format!(
            "the two a12 estimates differ by {:.1} % (cross family {:e}, q family {:e})",
            100.0 * a12_spread,
            a12_pair.0,
            a12_pair.1
        ));
    }
    if max_iter > 1 && !converged {
        warnings.push(format!(
            "refinement stopped after {iterations} iterations without converging"
        ));
    }
    let warning = (!warnings.is_empty()).then(|| warnings.join("; "));
    let summary = |name, f: &LinearFit| FitSummary {
        name,
        residual_norm: f.residual_norm,
        points: f.points,
        solver_disagreement: f.solver_disagreement,
    };
    Ok(IdReport {
        params: guess,
        a12_cross: a12_pair.0,
        a12_q: a12_pair.1,
        a12_spread,
        warning,
        fits: vec![
            summary("d-axis a30 a40", &fd),
            summary("cross a22", &fx22),
            summary("cross a12", &fx12),
            summary("q-axis a12", &fq12),
            summary("q-axis a04", &fq04),
        ],
        iterations,
        mode: sweep.mode,
        linearization: lin,
        reference: sweep.reference,
        points: points.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::admittance;
    use std::f64::consts::PI;

    fn ipm() -> MotorParams {
        MotorParams::ipm_750w()
    }

    #[test]
    fn zero_dc_gives_ld() {
        let p = ipm();
        let inj = InjectionConfig::square(15.0);
        let pt = run_id_experiment(Vec2::ZERO, &inj, &p, &ExperimentOptions::default()).unwrap();
        // Quadrature of the curved ripple leaves a small mean.
        assert!(pt.i_bar.norm() < 2e-3 * pt.i_tilde.norm());
        let commanded = 15.0 / (inj.omega_inj * pt.i_tilde.x);
        let measured = pt.phi_tilde.x / pt.i_tilde.x;
        // The resistive drop biases the commanded reference slightly.
        assert!((commanded - p.ld).abs() / p.ld < 0.01);
        assert!((measured - p.ld).abs() / p.ld < 1e-3, "{measured} vs {}", p.ld);
        assert!(pt.i_tilde.y.abs() < 1e-9);
    }

    #[test]
    fn steady_current_matches_dc_voltage() {
        let p = ipm();
        let inj = InjectionConfig::square(15.0);
        for u in [Vec2::new(1.5 * p.r * p.i_n, 0.0), Vec2::new(0.0, -2.0 * p.r * p.i_n)] {
            let pt = run_id_experiment(u, &inj, &p, &ExperimentOptions::default()).unwrap();
            let ri = pt.i_bar * p.r;
            assert!((ri - u).norm() <= 1e-3 * u.norm(), "{ri:?} vs {u:?}");
        }
    }

    #[test]
    fn ripple_peak_is_i_tilde_times_max_f() {
        let p = ipm();
        let inj = InjectionConfig::square(15.0);
        let pt = run_id_experiment(Vec2::ZERO, &inj, &p, &ExperimentOptions::default()).unwrap();
        // Fine locked-rotor run of the last period.
        let mut phi = pt.u_tilde * (inj.F(0.0) / inj.omega_inj);
        let dt = inj.period() / 400.0;
        let mut peak: f64 = 0.0;
        for period in 0..40 {
            for k in 0..400 {
                let t0 = (period * 400 + k) as f64 * dt;
                phi = locked_rotor_step_with(phi, t0, dt, &p, |s| inj.injected_voltage(s.step_mid(), Vec2::ZERO))
                    .unwrap();
                if period == 39 {
                    peak = peak.max(current_from_flux(phi, &p).x);
                }
            }
        }
        let expect = pt.i_tilde.x * PI / 2.0;
        assert!((peak - expect).abs() / expect < 0.02, "{peak} vs {expect}");
    }

    #[test]
    fn unsettled_experiment_is_reported() {
        let p = ipm();
        let inj = InjectionConfig::square(15.0);
        let opts = ExperimentOptions {
            settle: Some(0.0),
            initial_flux: Some(Vec2::ZERO),
            ..ExperimentOptions::default()
        };
        let res = run_id_experiment(Vec2::new(2.0 * p.r * p.i_n, 0.0), &inj, &p, &opts);
        assert!(matches!(res, Err(IdError::NotSettled { .. })), "{res:?}");
    }

    /// Synthetic points from the closed-form first-order admittance.
    fn synthetic(p: &MotorParams, family: Family, levels: &[f64]) -> Vec<IdPoint> {
        let omega = DEFAULT_OMEGA_INJ;
        levels
            .iter()
            .map(|&l| {
                let (i_bar, u_tilde) = match family {
                    Family::DAxis => (Vec2::new(l * p.i_n, 0.0), Vec2::new(15.0, 0.0)),
                    Family::Cross => (Vec2::new(0.0, l * p.i_n), Vec2::new(15.0, 0.0)),
                    _ => (Vec2::new(0.0, l * p.i_n), Vec2::new(0.0, 15.0)),
                };
                let phi_t = u_tilde * (1.0 / omega);
                IdPoint {
                    u_bar: i_bar * p.r,
                    u_tilde,
                    omega_inj: omega,
                    i_bar,
                    i_tilde: admittance(i_bar, p).mul_vec(phi_t),
                    phi_tilde: phi_t,
                    window: Vec::new(),
                }
            })
            .collect()
    }

    #[test]
    fn first_order_fits_invert_first_order_data() {
        let p = ipm();
        let levels: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
        let guess = MotorParams {
            ..p.without_saturation()
        };
        let lin = Linearization::FirstOrder;
        let r = RippleReference::Commanded;
        let fd = fit_d_axis(&synthetic(&p, Family::DAxis, &levels), &guess, lin, r).unwrap();
        assert!((fd.coef[0] - p.a30).abs() < 1e-9 * p.a30.abs());
        assert!((fd.coef[1] - p.a40).abs() < 1e-9 * p.a40.abs());
        assert!(fd.solver_disagreement < 1e-10);
        let (x22, x12) = fit_cross_terms(&synthetic(&p, Family::Cross, &levels), &guess, lin, r).unwrap();
        assert!((x22.coef[0] - p.a22).abs() < 1e-9 * p.a22);
        assert!((x12.coef[0] - p.a12).abs() < 1e-9 * p.a12);
        let (q12, q04) = fit_q_axis(&synthetic(&p, Family::QAxis, &levels), &guess, lin, r).unwrap();
        assert!((q12.coef[0] - p.a12).abs() < 1e-9 * p.a12);
        assert!((q04.coef[0] - p.a04).abs() < 1e-9 * p.a04);
    }

    /// Points whose window flux is `φ̄ + ψ_j` exactly, demodulated the same
    /// way as in an experiment.
    fn synthetic_window(p: &MotorParams, family: Family, levels: &[f64]) -> Vec<IdPoint> {
        let inj = InjectionConfig::square(15.0);
        let n = 8;
        let h = inj.period() / n as f64;
        levels
            .iter()
            .map(|&l| {
                let (phi_bar, u_tilde) = match family {
                    Family::DAxis => (Vec2::new(l * p.ld * p.i_n, 0.0), Vec2::new(15.0, 0.0)),
                    Family::Cross => (Vec2::new(0.0, l * p.lq * p.i_n), Vec2::new(15.0, 0.0)),
                    _ => (Vec2::new(0.0, l * p.lq * p.i_n), Vec2::new(0.0, 15.0)),
                };
                let mut window: Vec<WindowSample> = (0..=n)
                    .map(|k| {
                        let f = inj.F(inj.omega_inj * k as f64 * h);
                        WindowSample {
                            weight: if k == 0 || k == n { 0.5 * h } else { h },
                            f,
                            psi: u_tilde * (f / inj.omega_inj),
                        }
                    })
                    .collect();
                let w: f64 = window.iter().map(|s| s.weight).sum();
                let m = window.iter().fold(Vec2::ZERO, |a, s| a + s.psi * s.weight) * (1.0 / w);
                window.iter_mut().for_each(|s| s.psi -= m);
                let f2: f64 = window.iter().map(|s| s.weight * s.f * s.f).sum();
                let sum = |g: &dyn Fn(&WindowSample) -> Vec2| window.iter().fold(Vec2::ZERO, |a, s| a + g(s));
                let i_bar = sum(&|s| current_from_flux(phi_bar + s.psi, p) * s.weight) * (1.0 / w);
                let i_tilde = sum(&|s| current_from_flux(phi_bar + s.psi, p) * (s.weight * s.f)) * (1.0 / f2);
                let phi_tilde = sum(&|s| s.psi * (s.weight * s.f)) * (1.0 / f2);
                IdPoint {
                    u_bar: i_bar * p.r,
                    u_tilde,
                    omega_inj: inj.omega_inj,
                    i_bar,
                    i_tilde,
                    phi_tilde,
                    window,
                }
            })
            .collect()
    }

    #[test]
    fn waveform_regressors_invert_window_data() {
        for p in [ipm(), MotorParams::spm_1500w()] {
            let levels: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
            let lin = Linearization::Waveform;
            let r = RippleReference::MeasuredFlux;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            let fd = fit_d_axis(&synthetic_window(&p, Family::DAxis, &levels), &p, lin, r).unwrap();
            assert!(
                rel(fd.coef[0], p.a30) < 1e-8 && rel(fd.coef[1], p.a40) < 1e-8,
                "{:?}",
                fd.coef
            );
            let (x22, x12) = fit_cross_terms(&synthetic_window(&p, Family::Cross, &levels), &p, lin, r).unwrap();
            assert!(rel(x22.coef[0], p.a22) < 1e-8 && rel(x12.coef[0], p.a12) < 1e-8);
            let (q12, q04) = fit_q_axis(&synthetic_window(&p, Family::QAxis, &levels), &p, lin, r).unwrap();
            assert!(rel(q12.coef[0], p.a12) < 1e-8 && rel(q04.coef[0], p.a04) < 1e-8);
        }
    }

    #[test]
    fn two_point_fit_agrees_with_sweep() {
        let p = ipm();
        let guess = p.without_saturation();
        let all: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
        let r = RippleReference::Commanded;
        let lin = Linearization::FirstOrder;
        let full = fit_d_axis(&synthetic(&p, Family::DAxis, &all), &guess, lin, r).unwrap();
        // Two non-zero levels plus the zero point: the minimal design.
        let few = fit_d_axis(&synthetic(&p, Family::DAxis, &[-1.0, 0.0, 1.5]), &guess, lin, r).unwrap();
        for k in 0..2 {
            assert!((full.coef[k] - few.coef[k]).abs() <= 0.01 * full.coef[k].abs());
        }
    }

    #[test]
    fn design_errors() {
        let p = ipm();
        let guess = p.without_saturation();
        let r = RippleReference::Commanded;
        let lin = Linearization::FirstOrder;
        let one_sided = synthetic(&p, Family::DAxis, &[0.5, 1.0, 1.5]);
        assert!(matches!(
            fit_d_axis(&one_sided, &guess, lin, r),
            Err(IdError::Design { .. })
        ));
        let single = synthetic(&p, Family::Cross, &[-1.0, 1.0]);
        assert!(matches!(
            fit_cross_terms(&single, &guess, lin, r),
            Err(IdError::Design { .. })
        ));
        assert!(matches!(estimate_ld_lq(&[], r), Err(IdError::Design { .. })));
    }

    #[test]
    fn odd_cross_ripple() {
        let p = ipm();
        let inj = InjectionConfig::square(15.0);
        let opts = ExperimentOptions::default();
        let u = 1.5 * p.r * p.i_n;
        let plus = run_id_experiment(Vec2::new(0.0, u), &inj, &p, &opts).unwrap();
        let minus = run_id_experiment(Vec2::new(0.0, -u), &inj, &p, &opts).unwrap();
        assert!((plus.i_tilde.y + minus.i_tilde.y).abs() < 1e-9 * plus.i_tilde.y.abs().max(1e-9));
        assert!((plus.i_tilde.x - minus.i_tilde.x).abs() < 1e-9 * plus.i_tilde.x.abs());
    }

    #[test]
    fn linear_plant_identifies_zero_saturation() {
        let p = ipm().without_saturation();
        let rep = identify_full(&p, &IdSweep::new(15.0)).unwrap();
        assert!((rep.params.ld - p.ld).abs() < 1e-3 * p.ld, "{}", rep.params.ld);
        assert!((rep.params.lq - p.lq).abs() < 1e-3 * p.lq, "{}", rep.params.lq);
        for v in rep.normalized().as_array() {
            assert!(v.abs() < 1e-3, "{v}");
        }
        // a12 of a linear plant is zero: no ripple crosses axes.
        for pt in rep.points.iter().filter(|(f, _)| *f == Family::QAxis) {
            assert!(pt.1.i_tilde.x.abs() < 1e-9);
        }
    }
}
