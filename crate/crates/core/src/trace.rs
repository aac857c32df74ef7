//! Sampled scenario records and their CSV form.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::vec2::Vec2;

/// Column order of a scenario trace.
pub const TRACE_COLUMNS: [&str; 11] = [
    "t", "u_gamma", "u_delta", "i_gamma", "i_delta", "i_alpha", "i_beta", "theta", "omega", "theta_c", "tau_L",
];

/// Columns appended by demodulation.
pub const DEMOD_COLUMNS: [&str; 4] = ["i_bar_g", "i_bar_d", "i_tilde_g", "i_tilde_d"];

/// Columns appended by position estimation.
pub const ESTIMATE_COLUMNS: [&str; 3] = ["theta_hat", "residual", "ambiguity"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace CSV is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("trace timestamps must be strictly increasing with a constant step (row {0})")]
    IrregularTime(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot open {path}: {source}")]
    Open {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// One measurement sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    /// Applied controller-frame voltage (V).
    pub u_gd: Vec2,
    /// Measured controller-frame current (A).
    pub i_gd: Vec2,
    /// Measured stator current (A).
    pub i_ab: Vec2,
    /// True electrical angle, wrapped (rad).
    pub theta: f64,
    /// True electrical speed (rad/s).
    pub omega: f64,
    /// Controller angle, wrapped (rad).
    pub theta_c: f64,
    pub tau_l: f64,
}

impl TraceRecord {
    fn values(&self) -> [f64; 11] {
        [
            self.t,
            self.u_gd.x,
            self.u_gd.y,
            self.i_gd.x,
            self.i_gd.y,
            self.i_ab.x,
            self.i_ab.y,
            self.theta,
            self.omega,
            self.theta_c,
            self.tau_l,
        ]
    }
}

/// Uniformly sampled record of a simulation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioTrace {
    /// Sample period (s).
    pub dt: f64,
    pub records: Vec<TraceRecord>,
}

impl ScenarioTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn currents_gd(&self) -> Vec<Vec2> {
        self.records.iter().map(|r| r.i_gd).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(TRACE_COLUMNS)?;
        for r in &self.records {
            wtr.write_record(r.values().iter().map(|v| fmt_sig9(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TraceError> {
        let table = CsvTable::read(r)?;
        let cols: Vec<usize> = TRACE_COLUMNS
            .iter()
            .map(|c| table.column(c))
            .collect::<Result<_, _>>()?;
        let mut records = Vec::with_capacity(table.rows.len());
        for (k, row) in table.rows.iter().enumerate() {
            let v = |c: usize| row[cols[c]];
            records.push(TraceRecord {
                t: v(0),
                u_gd: Vec2::new(v(1), v(2)),
                i_gd: Vec2::new(v(3), v(4)),
                i_ab: Vec2::new(v(5), v(6)),
                theta: v(7),
                omega: v(8),
                theta_c: v(9),
                tau_l: v(10),
            });
            let _ = k;
        }
        let dt = check_uniform(&records)?;
        Ok(Self { dt, records })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self, TraceError> {
        let file = fs::File::open(path).map_err(|source| TraceError::Open {
            path: path.into(),
            source,
        })?;
        Self::read_csv(file)
    }
}

/// Sample period of a record sequence; rejects irregular timestamps.
fn check_uniform(records: &[TraceRecord]) -> Result<f64, TraceError> {
    if records.len() < 2 {
        return Ok(0.0);
    }
    let dt = records[1].t - records[0].t;
    if !(dt > 0.0) {
        return Err(TraceError::IrregularTime(1));
    }
    for (k, w) in records.windows(2).enumerate() {
        let step = w[1].t - w[0].t;
        // Timestamps carry 9 significant digits.
        let tol = 1e-8 * w[1].t.abs().max(dt) + 1e-6 * dt;
        if !(step > 0.0) || (step - dt).abs() > tol {
            return Err(TraceError::IrregularTime(k + 1));
        }
    }
    // Average step is more accurate than the first difference after rounding.
    let n = records.len() - 1;
    Ok((records[n].t - records[0].t) / n as f64)
}

/// Formats with nine significant digits in scientific notation.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        // Normalize -0.
        return "0.00000000e0".to_string();
    }
    format!("{v:.8e}")
}

/// Header plus numeric rows, indexed by column name.
#[derive(Clone, Debug, Default)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read<R: Read>(r: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(rec.len());
            for (c, field) in rec.iter().enumerate() {
                let v = parse_field(field).ok_or_else(|| TraceError::BadValue {
                    row: k + 1,
                    column: headers.get(c).cloned().unwrap_or_default(),
                    value: field.to_string(),
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, TraceError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    }
}

fn parse_field(s: &str) -> Option<f64> {
    match s {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => s.parse().ok(),
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
