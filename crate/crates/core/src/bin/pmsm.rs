use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pmsm_core::harness::{
    cmd_averaging_check, cmd_estimate, cmd_identify, cmd_simulate, HarnessError, RunConfig, DEFAULT_INJ_HZ,
};

/// Saturated PMSM simulation, signal-injection position estimation and
/// locked-rotor identification.
#[derive(Parser)]
#[command(name = "pmsm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Motor file, or `ipm` / `spm` for the built-in motors.
    #[arg(long, global = true, default_value = "ipm")]
    motor: PathBuf,
    /// Built-in scenario (rest, long-test, speed-reversal, load-step) or profile file.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Injection frequency (Hz).
    #[arg(long = "omega-inj", global = true, default_value_t = DEFAULT_INJ_HZ)]
    omega_inj: f64,
    /// Injection amplitude (V).
    #[arg(long = "u-tilde", global = true)]
    u_tilde: Option<f64>,
    /// Estimate with a linear magnetic model (the plant keeps its saturation).
    #[arg(long = "no-saturation", global = true)]
    no_saturation: bool,
    /// Standard deviation of the current measurement noise (A).
    #[arg(long = "noise-std", global = true, default_value_t = 0.0)]
    noise_std: f64,
    /// Seed of the measurement noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Time scale applied to the scenario profile.
    #[arg(long = "time-scale", global = true)]
    time_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv.
    Simulate,
    /// Estimate the rotor angle from a trace and write estimates.csv.
    Estimate {
        /// Trace CSV produced by `simulate`.
        trace: PathBuf,
        /// Initial interval excluded from the error summary (s).
        #[arg(long)]
        settle: Option<f64>,
    },
    /// Identify the magnetic model of the motor on a simulated locked rotor.
    Identify,
    /// Compare injected runs at Ω and 2Ω with the uninjected run.
    AveragingCheck,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let c = cli.common;
    let mut cfg = RunConfig::from_motor_path(&c.motor)?;
    cfg.scenario = c.scenario;
    cfg.omega_inj_hz = c.omega_inj;
    cfg.u_tilde = c.u_tilde;
    cfg.no_saturation = c.no_saturation;
    cfg.noise_std = c.noise_std;
    cfg.seed = c.seed;
    cfg.out = c.out;
    cfg.time_scale = c.time_scale;
    match cli.command {
        Command::Simulate => {
            let (path, trace) = cmd_simulate(&cfg)?;
            println!("wrote {} ({} samples)", path.display(), trace.len());
        }
        Command::Estimate { trace, settle } => {
            let s = cmd_estimate(&cfg, &trace, settle)?;
            println!(
                "samples {}  max error {:.3} deg  mean error {:.3} deg  ambiguous {:.1} %",
                s.samples,
                s.max_deg,
                s.mean_deg,
                100.0 * s.ambiguous
            );
        }
        Command::Identify => {
            let r = cmd_identify(&cfg)?;
            let p = &r.params;
            let n = r.normalized();
            println!("Ld = {:.4} mH  Lq = {:.4} mH", 1e3 * p.ld, 1e3 * p.lq);
            println!(
                "normalized a30 {:.4}  a12 {:.4}  a40 {:.4}  a22 {:.4}  a04 {:.4}",
                n.a30, n.a12, n.a40, n.a22, n.a04
            );
            let (x, q) = r.a12_normalized();
            println!("a12 estimates {x:.4} / {q:.4} ({} iterations)", r.iterations);
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
        }
        Command::AveragingCheck => {
            let r = cmd_averaging_check(&cfg)?;
            println!(
                "theta deviation {:.3e} / {:.3e} rad  ratio {:.3}",
                r.theta_dev[0], r.theta_dev[1], r.theta_ratio
            );
            println!("ripple residual ratio {:.3}", r.residual_ratio);
            println!(
                "flux ripple {:.4e} Wb vs {:.4e} Wb ({:.2} %)",
                r.ripple_amplitude,
                r.ripple_expected,
                100.0 * r.ripple_rel_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
