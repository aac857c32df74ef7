//! TOML files for motors and scenario profiles.
//!
//! Motor file:
//!
//! ```toml
//! name = "ipm"
//! R = 1.52          # ohm
//! n = 3
//! lambda = 0.196    # Wb
//! Ld = 9.15e-3      # H
//! Lq = 13.58e-3     # H
//! J = 5e-4          # kg m^2
//! In = 4.51         # A peak
//! rated_rpm = 1800  # optional
//! id_u_tilde = 15.0 # optional identification injection amplitude (V)
//! a30_norm = 0.039  # or a30 = <SI value>; missing coefficients are zero
//! ```
//!
//! Scenario file (times in s, speeds in electrical rad/s, torque in N·m,
//! voltages in V):
//!
//! ```toml
//! name = "ramp"
//! duration = 4.0
//! settle = 0.5
//! u_rd_tau = 0.05
//! omega_c = [[0.0, 0.0], [4.0, 20.0]]
//! tau_l = [[0.0, 0.0]]
//! u_rd = [[0.0, 6.9, 0.0]]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::magnetics::{MotorParams, NormalizedSaturation};
use crate::scenario::{FilteredSteps, Piecewise, ScenarioProfile, DEFAULT_URD_TAU};
use crate::trace::fmt_sig9;
use crate::vec2::Vec2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MotorFile {
    name: Option<String>,
    #[serde(rename = "R")]
    r: f64,
    n: u32,
    lambda: f64,
    #[serde(rename = "Ld")]
    ld: f64,
    #[serde(rename = "Lq")]
    lq: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "In")]
    i_n: f64,
    rated_rpm: Option<f64>,
    id_u_tilde: Option<f64>,
    a30: Option<f64>,
    a12: Option<f64>,
    a40: Option<f64>,
    a22: Option<f64>,
    a04: Option<f64>,
    a30_norm: Option<f64>,
    a12_norm: Option<f64>,
    a40_norm: Option<f64>,
    a22_norm: Option<f64>,
    a04_norm: Option<f64>,
}

/// A motor loaded from a file or the built-in set.
#[derive(Clone, Debug, PartialEq)]
pub struct MotorConfig {
    pub name: String,
    pub params: MotorParams,
    /// Injection amplitude for identification sweeps (V).
    pub id_u_tilde: Option<f64>,
}

/// Names accepted by [`load_motor`] without a file.
pub const BUILTIN_MOTORS: [&str; 2] = ["ipm", "spm"];

/// Built-in motors; the SPM is identified with a 14 V injection amplitude.
pub fn builtin_motor(name: &str) -> Option<MotorConfig> {
    let (params, u) = match name {
        "ipm" => (MotorParams::ipm_750w(), 15.0),
        "spm" => (MotorParams::spm_1500w(), 14.0),
        _ => return None,
    };
    Some(MotorConfig {
        name: name.into(),
        params,
        id_u_tilde: Some(u),
    })
}

pub fn parse_motor(text: &str, origin: &str) -> Result<MotorConfig, ConfigError> {
    let f: MotorFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.into(),
        message: e.to_string(),
    })?;
    let invalid = |message: String| ConfigError::Invalid {
        path: origin.into(),
        message,
    };
    let mut p = MotorParams::linear(f.r, f.n, f.lambda, f.ld, f.lq, f.j, f.i_n);
    p.rated_rpm = f.rated_rpm;
    let pairs = [
        ("a30", f.a30, f.a30_norm),
        ("a12", f.a12, f.a12_norm),
        ("a40", f.a40, f.a40_norm),
        ("a22", f.a22, f.a22_norm),
        ("a04", f.a04, f.a04_norm),
    ];
    let mut raw = [0.0; 5];
    let mut norm = [0.0; 5];
    for (k, (name, si, nz)) in pairs.iter().enumerate() {
        match (si, nz) {
            (Some(_), Some(_)) => return Err(invalid(format!("give either {name} or {name}_norm, not both"))),
            (Some(v), None) => raw[k] = *v,
            (None, Some(v)) => norm[k] = *v,
            (None, None) => {}
        }
    }
    p = p.with_normalized_saturation(NormalizedSaturation {
        a30: norm[0],
        a12: norm[1],
        a40: norm[2],
        a22: norm[3],
        a04: norm[4],
    });
    for (dst, v) in [&mut p.a30, &mut p.a12, &mut p.a40, &mut p.a22, &mut p.a04]
        .into_iter()
        .zip(raw)
    {
        *dst += v;
    }
    p.validate().map_err(|e| invalid(e.to_string()))?;
    if let Some(u) = f.id_u_tilde {
        if !(u > 0.0) || !u.is_finite() {
            return Err(invalid(format!("id_u_tilde must be > 0, got {u}")));
        }
    }
    Ok(MotorConfig {
        name: f.name.unwrap_or_else(|| origin.into()),
        params: p,
        id_u_tilde: f.id_u_tilde,
    })
}

/// Loads a motor file; `ipm` and `spm` name the built-in motors unless a
/// file of that name exists.
pub fn load_motor(path: &Path) -> Result<MotorConfig, ConfigError> {
    if !path.exists() {
        if let Some(m) = path.to_str().and_then(builtin_motor) {
            return Ok(m);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.into(),
        source,
    })?;
    parse_motor(&text, &path.display().to_string())
}

/// Motor file contents for `p`, with SI saturation coefficients.
pub fn motor_to_toml(name: &str, p: &MotorParams, id_u_tilde: Option<f64>) -> String {
    let mut s = format!("name = {name:?}\n");
    let mut line = |k: &str, v: f64| s.push_str(&format!("{k} = {}\n", fmt_sig9(v)));
    line("R", p.r);
    line("lambda", p.lambda);
    line("Ld", p.ld);
    line("Lq", p.lq);
    line("J", p.j);
    line("In", p.i_n);
    for (k, v) in [
        ("a30", p.a30),
        ("a12", p.a12),
        ("a40", p.a40),
        ("a22", p.a22),
        ("a04", p.a04),
    ] {
        line(k, v);
    }
    if let Some(r) = p.rated_rpm {
        line("rated_rpm", r);
    }
    if let Some(u) = id_u_tilde {
        line("id_u_tilde", u);
    }
    s.push_str(&format!("n = {}\n", p.n));
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    duration: f64,
    #[serde(default)]
    settle: f64,
    u_rd_tau: Option<f64>,
    #[serde(default)]
    omega_c: Vec<[f64; 2]>,
    #[serde(default)]
    tau_l: Vec<[f64; 2]>,
    #[serde(default)]
    u_rd: Vec<[f64; 3]>,
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioProfile, ConfigError> {
    let f: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.into(),
        message: e.to_string(),
    })?;
    let invalid = |e: crate::scenario::ScenarioError| ConfigError::Invalid {
        path: origin.into(),
        message: e.to_string(),
    };
    let piecewise = |pts: &[[f64; 2]]| {
        if pts.is_empty() {
            Ok(Piecewise::constant(0.0))
        } else {
            Piecewise::new(pts.iter().map(|[t, v]| (*t, *v)).collect())
        }
    };
    let profile = ScenarioProfile {
        name: f.name.unwrap_or_else(|| origin.into()),
        duration: f.duration,
        omega_c: piecewise(&f.omega_c).map_err(invalid)?,
        tau_l: piecewise(&f.tau_l).map_err(invalid)?,
        u_rd: FilteredSteps::new(
            f.u_rd.iter().map(|[t, g, d]| (*t, Vec2::new(*g, *d))).collect(),
            f.u_rd_tau.unwrap_or(DEFAULT_URD_TAU),
        )
        .map_err(invalid)?,
        settle: f.settle,
    };
    profile.validate().map_err(invalid)?;
    Ok(profile)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioProfile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.into(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string())
}
