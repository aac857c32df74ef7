//! Moving-window demodulation of sampled currents into the slow component `ī`
//! and the ripple amplitude `ĩ` (the coefficient of `F(Ωt)`).
//!
//! Both are trapezoidal sums over the trailing window of `N·periods + 1`
//! samples, where `N` is the number of samples per injection period:
//!
//! ```text
//! ī = Σ w i / (periods·T)        ĩ = Σ w i F(Ωt) / Σ w F(Ωt)²
//! ```

use std::collections::VecDeque;

use thiserror::Error;

use crate::injection::InjectionConfig;
use crate::vec2::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemodError {
    #[error("sample rate {rate} Hz is not a whole multiple of the injection frequency {freq} Hz")]
    NonIntegerRatio { rate: f64, freq: f64 },
    #[error("{0} samples per injection period; at least 8 are needed")]
    TooFewSamples(usize),
    #[error("window must span at least one period")]
    ZeroPeriods,
    #[error("injection primitive vanishes on the sample grid")]
    DegeneratePrimitive,
}

/// Minimum samples per injection period.
pub const MIN_SAMPLES_PER_PERIOD: usize = 8;

/// Window geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct DemodConfig {
    pub samples_per_period: usize,
    /// Window length in injection periods.
    pub periods: usize,
    /// Sample period (s).
    pub dt: f64,
    pub injection: InjectionConfig,
}

impl DemodConfig {
    /// One-period window at `sample_rate`.
    pub fn new(inj: &InjectionConfig, sample_rate: f64) -> Result<Self, DemodError> {
        Self::with_periods(inj, sample_rate, 1)
    }

    pub fn with_periods(inj: &InjectionConfig, sample_rate: f64, periods: usize) -> Result<Self, DemodError> {
        if periods == 0 {
            return Err(DemodError::ZeroPeriods);
        }
        let freq = inj.frequency();
        let ratio = sample_rate / freq;
        let n = ratio.round();
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * ratio {
            return Err(DemodError::NonIntegerRatio {
                rate: sample_rate,
                freq,
            });
        }
        let n = n as usize;
        if n < MIN_SAMPLES_PER_PERIOD {
            return Err(DemodError::TooFewSamples(n));
        }
        Ok(Self {
            samples_per_period: n,
            periods,
            dt: 1.0 / sample_rate,
            injection: inj.clone(),
        })
    }

    /// Samples in one window.
    pub fn window_len(&self) -> usize {
        self.samples_per_period * self.periods + 1
    }

    /// Window duration (s).
    pub fn window_time(&self) -> f64 {
        (self.window_len() - 1) as f64 * self.dt
    }

    fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.window_len() {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Demodulated currents for the window ending at `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DemodulatedCurrents {
    pub t: f64,
    pub i_bar: Vec2,
    pub i_tilde: Vec2,
}

/// Correlates one full window. `window` holds `(t, x)` in time order.
fn demod_window(
    cfg: &DemodConfig,
    window: impl Iterator<Item = (f64, Vec2)>,
) -> Result<DemodulatedCurrents, DemodError> {
    let omega = cfg.injection.omega_inj;
    let mut sum = Vec2::ZERO;
    let mut corr = Vec2::ZERO;
    let mut norm = 0.0;
    let mut t_end = 0.0;
    for (k, (t, x)) in window.enumerate() {
        let w = cfg.weight(k);
        let f = cfg.injection.F(omega * t);
        sum += x * w;
        corr += x * (w * f);
        norm += w * f * f;
        t_end = t;
    }
    if !(norm > 0.0) {
        return Err(DemodError::DegeneratePrimitive);
    }
    Ok(DemodulatedCurrents {
        t: t_end,
        i_bar: sum * (1.0 / cfg.window_time()),
        i_tilde: corr * (1.0 / norm),
    })
}

/// Demodulates a uniformly sampled series. Entry `k` is `None` until a full
/// window ends at sample `k`.
pub fn demodulate(
    times: &[f64],
    x: &[Vec2],
    cfg: &DemodConfig,
) -> Result<Vec<Option<DemodulatedCurrents>>, DemodError> {
    assert_eq!(times.len(), x.len(), "times and samples differ in length");
    let w = cfg.window_len();
    let mut out = vec![None; x.len()];
    for end in (w - 1)..x.len() {
        let start = end + 1 - w;
        let window = times[start..=end].iter().copied().zip(x[start..=end].iter().copied());
        out[end] = Some(demod_window(cfg, window)?);
    }
    Ok(out)
}

/// Sample-by-sample demodulator holding one window of history.
#[derive(Clone, Debug)]
pub struct StreamingDemodulator {
    cfg: DemodConfig,
    buf: VecDeque<(f64, Vec2)>,
}

impl StreamingDemodulator {
    pub fn new(cfg: DemodConfig) -> Self {
        let cap = cfg.window_len();
        Self {
            cfg,
            buf: VecDeque::with_capacity(cap),
        }
    }

    pub fn config(&self) -> &DemodConfig {
        &self.cfg
    }

    /// Adds a sample; returns the demodulated value once a window is full.
    pub fn push(&mut self, t: f64, x: Vec2) -> Result<Option<DemodulatedCurrents>, DemodError> {
        if self.buf.len() == self.cfg.window_len() {
            self.buf.pop_front();
        }
        self.buf.push_back((t, x));
        if self.buf.len() < self.cfg.window_len() {
            return Ok(None);
        }
        demod_window(&self.cfg, self.buf.iter().copied()).map(Some)
    }

    pub fn reset(&mut self) {
        self.buf.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::{Waveform, DEFAULT_OMEGA_INJ};
    use proptest::prelude::*;

    fn cfg(waveform: Waveform) -> DemodConfig {
        let inj = InjectionConfig::new(DEFAULT_OMEGA_INJ, Vec2::new(15.0, 0.0), waveform).unwrap();
        DemodConfig::new(&inj, 4000.0).unwrap()
    }

    fn series(n: usize, dt: f64, f: impl Fn(f64) -> Vec2) -> (Vec<f64>, Vec<Vec2>) {
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let x = t.iter().map(|&t| f(t)).collect();
        (t, x)
    }

    #[test]
    fn config_checks() {
        let inj = InjectionConfig::square(15.0);
        let c = DemodConfig::new(&inj, 4000.0).unwrap();
        assert_eq!(c.samples_per_period, 8);
        assert_eq!(c.window_len(), 9);
        assert!(matches!(
            DemodConfig::new(&inj, 4100.0),
            Err(DemodError::NonIntegerRatio { .. })
        ));
        assert!(matches!(
            DemodConfig::new(&inj, 2000.0),
            Err(DemodError::TooFewSamples(4))
        ));
        assert!(matches!(
            DemodConfig::with_periods(&inj, 4000.0, 0),
            Err(DemodError::ZeroPeriods)
        ));
    }

    #[test]
    fn constant_input() {
        for wf in [Waveform::Square, Waveform::Sine] {
            let c = cfg(wf);
            let (t, x) = series(40, c.dt, |_| Vec2::new(1.5, -0.25));
            let out = demodulate(&t, &x, &c).unwrap();
            assert!(out[..8].iter().all(Option::is_none));
            for d in out[8..].iter().flatten() {
                assert!((d.i_bar - Vec2::new(1.5, -0.25)).max_abs() < 1e-12);
                assert!(d.i_tilde.max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_primitive_has_unit_ripple() {
        for wf in [Waveform::Square, Waveform::Sine] {
            let c = cfg(wf.clone());
            let om = c.injection.omega_inj;
            let (t, x) = series(40, c.dt, |t| Vec2::new(wf.primitive(om * t), 0.0));
            for d in demodulate(&t, &x, &c).unwrap().iter().flatten() {
                assert!(d.i_bar.max_abs() < 1e-12);
                assert!((d.i_tilde.x - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drifting_mean_recovered_within_one_percent() {
        let c = cfg(Waveform::Square);
        let om = c.injection.omega_inj;
        let period = c.injection.period();
        // Drift of 0.5 % of the magnitude per period.
        let bar = |t: f64| Vec2::new(2.0 * (1.0 + 0.005 * t / period), -1.0);
        let tilde = Vec2::new(0.3, 0.2);
        let (t, x) = series(400, c.dt, |t| bar(t) + tilde * Waveform::Square.primitive(om * t));
        for d in demodulate(&t, &x, &c).unwrap().iter().flatten() {
            // ī is the window average: compare against the drift at the centre.
            let centre = bar(d.t - 0.5 * c.window_time());
            assert!((d.i_bar - centre).norm() <= 0.01 * centre.norm());
            assert!((d.i_tilde - tilde).norm() <= 0.01 * tilde.norm(), "{:?}", d.i_tilde);
        }
    }

    #[test]
    fn streaming_matches_batch() {
        let c = cfg(Waveform::Square);
        let (t, x) = series(60, c.dt, |t| Vec2::new((300.0 * t).sin(), (1234.0 * t).cos()));
        let batch = demodulate(&t, &x, &c).unwrap();
        let mut s = StreamingDemodulator::new(c.clone());
        for (k, (&tk, &xk)) in t.iter().zip(&x).enumerate() {
            assert_eq!(s.push(tk, xk).unwrap(), batch[k]);
        }
    }

    #[test]
    fn multi_period_window() {
        let inj = InjectionConfig::square(15.0);
        let c = DemodConfig::with_periods(&inj, 8000.0, 3).unwrap();
        assert_eq!(c.window_len(), 49);
        let om = inj.omega_inj;
        let (t, x) = series(100, c.dt, |t| Vec2::new(0.7, 0.0) + Vec2::new(0.0, 2.0) * inj.F(om * t));
        let d = demodulate(&t, &x, &c).unwrap()[99].unwrap();
        assert!((d.i_bar - Vec2::new(0.7, 0.0)).max_abs() < 1e-12);
        assert!((d.i_tilde - Vec2::new(0.0, 2.0)).max_abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn linearity(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let c = cfg(Waveform::Square);
            let g = |s: f64, t: f64| Vec2::new((s * 977.0 * t + 0.3 * s).sin(), (s * 2113.0 * t).cos());
            let s1 = seed as f64 * 0.01 + 1.0;
            let (t, x) = series(30, c.dt, |t| g(s1, t));
            let (_, y) = series(30, c.dt, |t| g(s1 + 0.5, t));
            let z: Vec<Vec2> = x.iter().zip(&y).map(|(x, y)| *x * a + *y * b).collect();
            let dx = demodulate(&t, &x, &c).unwrap();
            let dy = demodulate(&t, &y, &c).unwrap();
            let dz = demodulate(&t, &z, &c).unwrap();
            for k in 8..30 {
                let (p, q, r) = (dx[k].unwrap(), dy[k].unwrap(), dz[k].unwrap());
                prop_assert!((r.i_bar - (p.i_bar * a + q.i_bar * b)).max_abs() < 1e-12);
                prop_assert!((r.i_tilde - (p.i_tilde * a + q.i_tilde * b)).max_abs() < 1e-12);
            }
        }
    }
}
