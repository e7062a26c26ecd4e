//! Command-line entry point.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::error::InputError;
use crate::hybrid::{run_full, run_hybrid, run_qss, HybridParams};
use crate::model::SystemModel;
use crate::scenario::{load_case, parse_schedule, write_trace_file, EventSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Qss,
    Hybrid,
}

#[derive(Debug, Parser)]
#[command(name = "ltstab", version, about = "Long-term stability simulation with full, QSS and hybrid models")]
pub struct Args {
    /// Case file (JSON).
    #[arg(long)]
    pub case: PathBuf,
    /// Event schedule (JSON). Without it the system is left undisturbed.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
    pub mode: Mode,
    /// Simulation horizon in seconds.
    #[arg(long = "t-end", default_value_t = 300.0)]
    pub t_end: f64,
    /// Full-model step in seconds.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// QSS step in seconds.
    #[arg(long = "dt-qss", default_value_t = 0.1)]
    pub dt_qss: f64,
    /// OXL deviation threshold for switching back to the full model.
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    /// Length of the initial full-model phase in seconds.
    #[arg(long, default_value_t = 20.0)]
    pub tau1: f64,
    /// Full-model steps per damping probe.
    #[arg(long = "probe-steps", default_value_t = 200)]
    pub probe_steps: usize,
    /// Trace CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Verdict JSON output.
    #[arg(long)]
    pub verdict: Option<PathBuf>,
    /// Run label. The engines are deterministic and draw no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("--{name} must be a positive number, got {v}"))
    }
}

impl Args {
    fn check(&self) -> Result<(), String> {
        positive("t-end", self.t_end)?;
        positive("dt", self.dt)?;
        positive("dt-qss", self.dt_qss)?;
        positive("eta", self.eta)?;
        if !(self.tau1.is_finite() && self.tau1 >= 0.0) {
            return Err(format!("--tau1 must be non-negative, got {}", self.tau1));
        }
        if self.probe_steps == 0 {
            return Err("--probe-steps must be at least 1".into());
        }
        Ok(())
    }

    pub fn params(&self) -> HybridParams {
        HybridParams {
            tau1: self.tau1,
            eta: self.eta,
            probe_steps: self.probe_steps,
            dt_full: self.dt,
            dt_qss: self.dt_qss,
            ..HybridParams::default()
        }
    }
}

/// Runs the tool. Returns 0 when the simulation ran (whatever its
/// verdict), 2 on usage or input errors and 1 when output files could not
/// be written.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = args.check() {
        eprintln!("error: {msg}");
        return 2;
    }
    let case = match load_case(&args.case) {
        Ok(c) => c,
        Err(e) => return input_error(&args.case, &e),
    };
    let schedule = match &args.schedule {
        None => EventSchedule::default(),
        Some(p) => match std::fs::read_to_string(p).map_err(InputError::from).and_then(|t| parse_schedule(&t)) {
            Ok(s) => s,
            Err(e) => return input_error(p, &e),
        },
    };
    let issues = schedule.validate_against(&case);
    if !issues.is_empty() {
        return input_error(args.schedule.as_ref().unwrap_or(&args.case), &InputError::Invalid(issues));
    }
    let (model, start) = match SystemModel::initialize(&case) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {}: no initial operating point: {e}", args.case.display());
            return 2;
        }
    };

    let mut params = args.params();
    params.bounds = case.bounds;
    let run = match args.mode {
        Mode::Full => run_full,
        Mode::Qss => run_qss,
        Mode::Hybrid => run_hybrid,
    };
    let outcome = run(&model, &start, &schedule.events, &params, args.t_end);

    if let Some(p) = &args.out {
        if let Err(e) = write_trace_file(&outcome.trace.to_table(&model), p) {
            eprintln!("error: {}: {e}", p.display());
            return 1;
        }
    }
    if let Some(p) = &args.verdict {
        if let Err(e) = std::fs::write(p, outcome.verdict.to_json() + "\n") {
            eprintln!("error: {}: {e}", p.display());
            return 1;
        }
    }
    let v = &outcome.verdict;
    println!(
        "{}: {} ({:?}, t = {}, {} jumps, {} switch-backs)",
        v.case,
        serde_json::to_value(v.outcome).ok().and_then(|x| x.as_str().map(str::to_string)).unwrap_or_default(),
        v.termination,
        v.t_final,
        v.jumps,
        v.switch_backs.len()
    );
    0
}

fn input_error(path: &std::path::Path, e: &InputError) -> i32 {
    eprintln!("error: {}: {e}", path.display());
    2
}
