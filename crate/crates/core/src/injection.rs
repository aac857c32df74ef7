//! High-frequency injection waveforms.
//!
//! The injected voltage is `ũ f(Ωt)` with `f` a 2π-periodic zero-mean
//! function. `F` is the zero-mean primitive of `f`; it describes the
//! shape of the resulting flux and current ripple.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use thiserror::Error;

use crate::vec2::{Vec2, Voltage};

#[derive(Debug, Error)]
pub enum InjectionError {
    #[error("injection pulsation must be positive, got {0}")]
    NonPositivePulsation(f64),
    #[error("waveform table needs at least 4 samples, got {0}")]
    TableTooShort(usize),
    #[error("waveform table is not uniformly sampled over one period: {0}")]
    TableNotUniform(String),
    #[error("waveform table mean is {0:e} after removal")]
    NonZeroMean(f64),
    #[error("reading waveform table: {0}")]
    Csv(#[from] csv::Error),
}

/// Periodic waveform given by uniform samples over one period, linearly
/// interpolated. The mean is removed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TableWaveform {
    values: Vec<f64>,
    /// `F` at each sample point.
    primitive: Vec<f64>,
}

impl TableWaveform {
    /// Builds a table from `values[k] = f(2πk/N)`, `k = 0..N`.
    pub fn new(mut values: Vec<f64>) -> Result<Self, InjectionError> {
        let n = values.len();
        if n < 4 {
            return Err(InjectionError::TableTooShort(n));
        }
        // The periodic piecewise-linear interpolant has the sample mean as
        // its exact mean.
        let mean = values.iter().sum::<f64>() / n as f64;
        for v in &mut values {
            *v -= mean;
        }
        let residual = values.iter().sum::<f64>() / n as f64;
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
        if residual.abs() > 1e-12 * scale {
            return Err(InjectionError::NonZeroMean(residual));
        }
        let h = TAU / n as f64;
        // Unshifted primitive G at nodes (trapezoid is exact for linear f).
        let mut g = vec![0.0; n + 1];
        for k in 0..n {
            g[k + 1] = g[k] + 0.5 * h * (values[k] + values[(k + 1) % n]);
        }
        // Mean of G over one period, exact for the piecewise-quadratic G:
        // ∫ over a segment = h (G_k + G_{k+1})/2 - h² (f_{k+1} - f_k)/12.
        let mut integral = 0.0;
        for k in 0..n {
            let df = values[(k + 1) % n] - values[k];
            integral += h * 0.5 * (g[k] + g[k + 1]) - h * h * df / 12.0;
        }
        let g_mean = integral / TAU;
        let primitive = g[..n].iter().map(|v| v - g_mean).collect();
        Ok(Self { values, primitive })
    }

    /// Reads a two-column `sigma,f` CSV covering one period. A trailing row
    /// at `sigma = 2π` repeating the first sample is accepted and dropped.
    pub fn from_csv(path: &Path) -> Result<Self, InjectionError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            rows.push(rec?);
        }
        Self::from_samples(&rows)
    }

    /// Builds a table from `(sigma, f)` pairs.
    pub fn from_samples(rows: &[(f64, f64)]) -> Result<Self, InjectionError> {
        let mut rows = rows.to_vec();
        if rows.len() >= 2 {
            let last = rows[rows.len() - 1].0;
            if (last - TAU).abs() < 1e-9 * TAU {
                rows.pop();
            }
        }
        let n = rows.len();
        if n < 4 {
            return Err(InjectionError::TableTooShort(n));
        }
        let h = TAU / n as f64;
        for (k, (sigma, _)) in rows.iter().enumerate() {
            if (sigma - k as f64 * h).abs() > 1e-6 * h {
                return Err(InjectionError::TableNotUniform(format!(
                    "row {k} has sigma {sigma}, expected {}",
                    k as f64 * h
                )));
            }
        }
        Self::new(rows.into_iter().map(|(_, f)| f).collect())
    }

    fn locate(&self, sigma: f64) -> (usize, f64, f64) {
        let n = self.values.len();
        let h = TAU / n as f64;
        let s = sigma.rem_euclid(TAU);
        let k = ((s / h).floor() as usize).min(n - 1);
        let t = s - k as f64 * h;
        (k, t, h)
    }

    fn f(&self, sigma: f64) -> f64 {
        let (k, t, h) = self.locate(sigma);
        let n = self.values.len();
        let (a, b) = (self.values[k], self.values[(k + 1) % n]);
        a + (b - a) * t / h
    }

    fn primitive(&self, sigma: f64) -> f64 {
        let (k, t, h) = self.locate(sigma);
        let n = self.values.len();
        let (a, b) = (self.values[k], self.values[(k + 1) % n]);
        self.primitive[k] + a * t + 0.5 * (b - a) * t * t / h
    }
}

/// Shape of `f`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Waveform {
    /// `+1` on `[0, π)`, `-1` on `[π, 2π)`.
    #[default]
    Square,
    /// `sin σ`.
    Sine,
    Table(TableWaveform),
}

/// Phases within this distance of a square-wave edge are treated as past
/// the edge, so that rounding in `Ωt` does not flip the sign.
const EDGE_SNAP: f64 = 1e-9;

impl Waveform {
    /// `f(σ)`.
    pub fn f(&self, sigma: f64) -> f64 {
        match self {
            Waveform::Square => {
                let s = sigma.rem_euclid(TAU);
                if (PI - EDGE_SNAP..TAU - EDGE_SNAP).contains(&s) {
                    -1.0
                } else {
                    1.0
                }
            }
            Waveform::Sine => sigma.sin(),
            Waveform::Table(t) => t.f(sigma),
        }
    }

    /// Zero-mean primitive `F(σ)`.
    pub fn primitive(&self, sigma: f64) -> f64 {
        match self {
            Waveform::Square => {
                let s = sigma.rem_euclid(TAU);
                if s <= PI {
                    s - PI / 2.0
                } else {
                    1.5 * PI - s
                }
            }
            Waveform::Sine => -sigma.cos(),
            Waveform::Table(t) => t.primitive(sigma),
        }
    }

    /// `max F` over one period.
    pub fn primitive_max(&self) -> f64 {
        match self {
            Waveform::Square => PI / 2.0,
            Waveform::Sine => 1.0,
            Waveform::Table(t) => {
                // F is piecewise quadratic; sample densely.
                (0..4096)
                    .map(|k| t.primitive(TAU * k as f64 / 4096.0))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// True when `f` is piecewise constant with edges at `0` and `π`; such
    /// inputs are held constant over integration steps that align with
    /// the edges.
    pub fn is_square(&self) -> bool {
        matches!(self, Waveform::Square)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Waveform::Square => "square",
            Waveform::Sine => "sine",
            Waveform::Table(_) => "table",
        }
    }
}

/// Injection settings held constant over a run.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionConfig {
    /// Pulsation `Ω` (rad/s).
    pub omega_inj: f64,
    /// Amplitude vector `ũ` (V), in the frame the injection is applied in.
    pub u_tilde: Voltage,
    pub waveform: Waveform,
}

/// Nominal injection pulsation, 2π·500 rad/s.
pub const DEFAULT_OMEGA_INJ: f64 = TAU * 500.0;

impl InjectionConfig {
    pub fn new(omega_inj: f64, u_tilde: Voltage, waveform: Waveform) -> Result<Self, InjectionError> {
        if !(omega_inj > 0.0) || !omega_inj.is_finite() {
            return Err(InjectionError::NonPositivePulsation(omega_inj));
        }
        Ok(Self {
            omega_inj,
            u_tilde,
            waveform,
        })
    }

    /// Square injection of amplitude `u` on the first axis at 500 Hz.
    pub fn square(u: f64) -> Self {
        Self {
            omega_inj: DEFAULT_OMEGA_INJ,
            u_tilde: Vec2::new(u, 0.0),
            waveform: Waveform::Square,
        }
    }

    /// Injection period `T = 2π/Ω` (s).
    pub fn period(&self) -> f64 {
        TAU / self.omega_inj
    }

    /// Injection frequency `Ω/2π` (Hz).
    pub fn frequency(&self) -> f64 {
        self.omega_inj / TAU
    }

    pub fn f(&self, sigma: f64) -> f64 {
        self.waveform.f(sigma)
    }

    #[allow(non_snake_case)]
    pub fn F(&self, sigma: f64) -> f64 {
        self.waveform.primitive(sigma)
    }

    /// `base + ũ f(Ωt)`.
    pub fn injected_voltage(&self, t: f64, base: Voltage) -> Voltage {
        base + self.u_tilde * self.f(self.omega_inj * t)
    }
}
