//! Python bindings: motor models, scenario simulation, position estimation,
//! identification and the averaging check.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pmsm_core::config::{builtin_motor, load_motor, motor_to_toml, MotorConfig};
use pmsm_core::demod::{demodulate as demod_series, DemodConfig};
use pmsm_core::estimator::EstimatorConfig;
use pmsm_core::harness::{
    averaging_check as run_averaging, error_summary, estimate_trace, resolve_scenario, HarnessError,
    AVERAGING_STEPS_PER_PERIOD, DEFAULT_INJ_HZ, DEFAULT_U_TILDE,
};
use pmsm_core::ident::{identify_full, IdSweep};
use pmsm_core::injection::{InjectionConfig, Waveform};
use pmsm_core::magnetics::{self, AdmittanceModel, NormalizedSaturation, DEFAULT_INVERSION_TOL};
use pmsm_core::scenario::{run_scenario, SimOptions};
use pmsm_core::trace::{ScenarioTrace, TRACE_COLUMNS};
use pmsm_core::vec2::Vec2;

fn to_py(e: impl Into<HarnessError>) -> PyErr {
    let e = e.into();
    if e.exit_code() == 1 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn v2((x, y): (f64, f64)) -> Vec2 {
    Vec2::new(x, y)
}

fn tuple(v: Vec2) -> (f64, f64) {
    (v.x, v.y)
}

fn injection(u_tilde: f64, omega_inj_hz: f64) -> PyResult<InjectionConfig> {
    InjectionConfig::new(
        std::f64::consts::TAU * omega_inj_hz,
        Vec2::new(u_tilde, 0.0),
        Waveform::Square,
    )
    .map_err(to_py)
}

fn normalized_dict<'py>(py: Python<'py>, n: &NormalizedSaturation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in ["a30", "a12", "a40", "a22", "a04"].into_iter().zip(n.as_array()) {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Saturated PMSM parameters.
#[pyclass(name = "Motor", from_py_object)]
#[derive(Clone)]
struct PyMotor {
    config: MotorConfig,
}

#[pymethods]
impl PyMotor {
    /// Built-in motor: "ipm" or "spm".
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        builtin_motor(name)
            .map(|config| Self { config })
            .ok_or_else(|| PyValueError::new_err(format!("unknown motor `{name}` (expected ipm or spm)")))
    }

    /// Motor TOML file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_motor(path.as_ref()).map(|config| Self { config }).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.config.name.clone()
    }

    /// Physical parameters (SI units).
    #[getter]
    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = &self.config.params;
        let d = PyDict::new(py);
        d.set_item("R", p.r)?;
        d.set_item("n", p.n)?;
        d.set_item("lambda", p.lambda)?;
        d.set_item("Ld", p.ld)?;
        d.set_item("Lq", p.lq)?;
        d.set_item("J", p.j)?;
        d.set_item("In", p.i_n)?;
        d.set_item("rated_rpm", p.rated_rpm)?;
        for (k, v) in [
            ("a30", p.a30),
            ("a12", p.a12),
            ("a40", p.a40),
            ("a22", p.a22),
            ("a04", p.a04),
        ] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Dimensionless saturation products.
    fn normalized<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        normalized_dict(py, &self.config.params.normalized_saturation())
    }

    /// Same motor with all saturation coefficients set to zero.
    fn without_saturation(&self) -> Self {
        let mut config = self.config.clone();
        config.params = config.params.without_saturation();
        Self { config }
    }

    fn energy(&self, phi: (f64, f64)) -> f64 {
        magnetics::energy(v2(phi), &self.config.params)
    }

    fn current_from_flux(&self, phi: (f64, f64)) -> (f64, f64) {
        tuple(magnetics::current_from_flux(v2(phi), &self.config.params))
    }

    #[pyo3(signature = (i, exact = true))]
    fn flux_from_current(&self, i: (f64, f64), exact: bool) -> PyResult<(f64, f64)> {
        let p = &self.config.params;
        if exact {
            magnetics::flux_from_current_exact(v2(i), p, DEFAULT_INVERSION_TOL)
                .map(tuple)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))
        } else {
            Ok(tuple(magnetics::flux_from_current_approx(v2(i), p)))
        }
    }

    /// Differential admittance `((dd, dq), (dq, qq))` at current `i`.
    #[pyo3(signature = (i, exact = true))]
    fn admittance(&self, i: (f64, f64), exact: bool) -> PyResult<((f64, f64), (f64, f64))> {
        let model = if exact {
            AdmittanceModel::Exact
        } else {
            AdmittanceModel::FirstOrder
        };
        let g = model
            .eval(v2(i), &self.config.params)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(((g.dd, g.dq), (g.dq, g.qq)))
    }

    fn to_toml(&self) -> String {
        motor_to_toml(&self.config.name, &self.config.params, self.config.id_u_tilde)
    }

    fn __repr__(&self) -> String {
        let p = &self.config.params;
        format!(
            "Motor({:?}, Ld={:e}, Lq={:e}, In={})",
            self.config.name, p.ld, p.lq, p.i_n
        )
    }
}

/// Uniformly sampled simulation record.
#[pyclass(name = "Trace", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    trace: ScenarioTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        ScenarioTrace::read_csv(text.as_bytes())
            .map(|trace| Self { trace })
            .map_err(to_py)
    }

    fn to_csv(&self) -> String {
        self.trace.to_csv_string()
    }

    /// Column name to list of values, in CSV column order.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let r = &self.trace.records;
        let col = |f: fn(&pmsm_core::trace::TraceRecord) -> f64| r.iter().map(f).collect::<Vec<f64>>();
        let cols = [
            col(|x| x.t),
            col(|x| x.u_gd.x),
            col(|x| x.u_gd.y),
            col(|x| x.i_gd.x),
            col(|x| x.i_gd.y),
            col(|x| x.i_ab.x),
            col(|x| x.i_ab.y),
            col(|x| x.theta),
            col(|x| x.omega),
            col(|x| x.theta_c),
            col(|x| x.tau_l),
        ];
        for (name, values) in TRACE_COLUMNS.iter().zip(cols) {
            d.set_item(*name, values)?;
        }
        Ok(d)
    }

    #[getter]
    fn sample_rate(&self) -> f64 {
        self.trace.sample_rate()
    }

    fn __len__(&self) -> usize {
        self.trace.len()
    }
}

/// Simulates a built-in scenario or a profile file with square injection on γ.
#[pyfunction]
#[pyo3(signature = (motor, scenario = "rest", u_tilde = DEFAULT_U_TILDE, omega_inj_hz = DEFAULT_INJ_HZ, noise_std = 0.0, seed = 0, time_scale = None))]
fn simulate(
    motor: &PyMotor,
    scenario: &str,
    u_tilde: f64,
    omega_inj_hz: f64,
    noise_std: f64,
    seed: u64,
    time_scale: Option<f64>,
) -> PyResult<PyTrace> {
    let p = &motor.config.params;
    let profile = resolve_scenario(scenario, p, time_scale).map_err(to_py)?;
    let inj = injection(u_tilde, omega_inj_hz)?;
    let opts = SimOptions {
        noise_std,
        seed,
        ..SimOptions::default()
    };
    run_scenario(&profile, &inj, p, &opts)
        .map(|trace| PyTrace { trace })
        .map_err(to_py)
}

/// Demodulates and estimates the angle of every full window of `trace`.
#[pyfunction]
#[pyo3(signature = (trace, motor, u_tilde = DEFAULT_U_TILDE, omega_inj_hz = DEFAULT_INJ_HZ, settle = 0.0))]
fn estimate<'py>(
    py: Python<'py>,
    trace: &PyTrace,
    motor: &PyMotor,
    u_tilde: f64,
    omega_inj_hz: f64,
    settle: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inj = injection(u_tilde, omega_inj_hz)?;
    let est = estimate_trace(&trace.trace, &inj, &motor.config.params, &EstimatorConfig::default()).map_err(to_py)?;
    let s = error_summary(&trace.trace, &est, settle);
    let d = PyDict::new(py);
    d.set_item("index", est.iter().map(|e| e.index).collect::<Vec<_>>())?;
    d.set_item(
        "theta_hat",
        est.iter().map(|e| e.estimate.theta_hat).collect::<Vec<_>>(),
    )?;
    d.set_item("residual", est.iter().map(|e| e.estimate.residual).collect::<Vec<_>>())?;
    d.set_item(
        "ambiguity",
        est.iter().map(|e| e.estimate.ambiguity).collect::<Vec<_>>(),
    )?;
    d.set_item("i_bar", est.iter().map(|e| tuple(e.demod.i_bar)).collect::<Vec<_>>())?;
    d.set_item(
        "i_tilde",
        est.iter().map(|e| tuple(e.demod.i_tilde)).collect::<Vec<_>>(),
    )?;
    d.set_item("max_error_deg", s.max_deg)?;
    d.set_item("mean_error_deg", s.mean_deg)?;
    d.set_item("ambiguous_fraction", s.ambiguous)?;
    Ok(d)
}

type Window = (f64, (f64, f64), (f64, f64));

/// Demodulates a uniformly sampled two-component series. Returns
/// `(t, i_bar, i_tilde)` for every sample that ends a full window.
#[pyfunction]
#[pyo3(signature = (t, x, omega_inj_hz = DEFAULT_INJ_HZ))]
fn demodulate(t: Vec<f64>, x: Vec<(f64, f64)>, omega_inj_hz: f64) -> PyResult<Vec<Window>> {
    if t.len() != x.len() {
        return Err(PyValueError::new_err("t and x differ in length"));
    }
    if t.len() < 2 {
        return Ok(Vec::new());
    }
    let inj = injection(1.0, omega_inj_hz)?;
    let rate = ((t.len() - 1) as f64 / (t[t.len() - 1] - t[0])).round();
    let cfg = DemodConfig::new(&inj, rate).map_err(to_py)?;
    let x: Vec<Vec2> = x.into_iter().map(v2).collect();
    Ok(demod_series(&t, &x, &cfg)
        .map_err(to_py)?
        .into_iter()
        .flatten()
        .map(|d| (d.t, tuple(d.i_bar), tuple(d.i_tilde)))
        .collect())
}

/// Locked-rotor identification with `motor` as the simulated plant.
#[pyfunction]
#[pyo3(signature = (motor, u_tilde = None))]
fn identify<'py>(py: Python<'py>, motor: &PyMotor, u_tilde: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let u = u_tilde.or(motor.config.id_u_tilde).unwrap_or(DEFAULT_U_TILDE);
    let r = identify_full(&motor.config.params, &IdSweep::new(u)).map_err(to_py)?;
    let d = PyDict::new(py);
    let mut config = motor.config.clone();
    config.name = format!("{}-identified", config.name);
    config.params = r.params;
    d.set_item("motor", PyMotor { config })?;
    d.set_item("normalized", normalized_dict(py, &r.normalized())?)?;
    d.set_item("a12_estimates", r.a12_normalized())?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("warning", r.warning.clone())?;
    d.set_item("report_toml", r.to_toml())?;
    Ok(d)
}

/// Injected runs at Ω and 2Ω compared with the uninjected run.
#[pyfunction]
#[pyo3(signature = (motor, scenario = "load-step", u_tilde = DEFAULT_U_TILDE, omega_inj_hz = DEFAULT_INJ_HZ, time_scale = None))]
fn averaging_check<'py>(
    py: Python<'py>,
    motor: &PyMotor,
    scenario: &str,
    u_tilde: f64,
    omega_inj_hz: f64,
    time_scale: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = &motor.config.params;
    let profile = resolve_scenario(scenario, p, time_scale).map_err(to_py)?;
    let inj = injection(u_tilde, omega_inj_hz)?;
    let r = run_averaging(&profile, &inj, p, AVERAGING_STEPS_PER_PERIOD).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("theta_dev", r.theta_dev)?;
    d.set_item("theta_ratio", r.theta_ratio)?;
    d.set_item("ripple_residual", r.ripple_residual)?;
    d.set_item("residual_ratio", r.residual_ratio)?;
    d.set_item("ripple_amplitude", r.ripple_amplitude)?;
    d.set_item("ripple_expected", r.ripple_expected)?;
    d.set_item("ripple_rel_error", r.ripple_rel_error)?;
    Ok(d)
}

#[pymodule]
fn pmsm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMotor>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(demodulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(averaging_check, m)?)?;
    Ok(())
}
