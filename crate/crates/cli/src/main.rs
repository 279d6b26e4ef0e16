//! `ebse`: run scenarios, threshold sweeps, periodic baselines and the self-check suite.
//!
//! Exit codes: 0 success, 1 I/O failure or failed verification, 2 invalid
//! scenario or arguments, 3 numeric divergence.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebse::agent::Fault;
use ebse::analysis::sweep::{tradeoff_sweep, write_sweep_csv};
use ebse::sim::metrics::{write_metrics, write_rates_csv};
use ebse::sim::trace::{fmt_f64, write_events_csv, write_trace_csv, SimTrace};
use ebse::sim::{compute_metrics, run_baseline, run_trace, Scenario, ScenarioError, SimError};
use ebse::verify::{run_verification, VerifyOptions};

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ebse", version, about = "Distributed event-based estimation and control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Diagnostic output on standard error.
    #[arg(long, global = true, env = "EBSE_LOG", default_value = "info")]
    log_level: LogLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum LogLevel {
    Error,
    Info,
}

#[derive(clap::Args, Debug)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, env = "EBSE_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario and write trace, events, rates and metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip the centralized reference estimator.
        #[arg(long)]
        no_reference: bool,
    },
    /// Sweep the threshold scale factors of the scenario's [sweep] section.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Periodic centralized baselines listed in the scenario.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Run the self-check suite.
    Verify {
        #[arg(long, env = "EBSE_OUT")]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    StrictTrigger,
    ResetNMinus1,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Io { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let scenario = Scenario::load(&common.scenario)?;
    Ok(match common.seed {
        Some(seed) => scenario.with_seed(seed),
        None => scenario,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Failure::io(&path, e))
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let mut out = create(dir, name)?;
    body(&mut out).and_then(|_| out.flush()).map_err(|e| Failure::io(&dir.join(name), e))
}

fn write_run_outputs(dir: &Path, scenario: &Scenario, trace: &SimTrace) -> Result<(), Failure> {
    let metrics = compute_metrics(trace);
    write_file(dir, "trace.csv", |w| write_trace_csv(trace, w))?;
    write_file(dir, "events.csv", |w| write_events_csv(trace, w))?;
    write_file(dir, "rates.csv", |w| write_rates_csv(trace, w))?;
    write_file(dir, "metrics.txt", |w| write_metrics(trace, &metrics, w))?;
    write_file(dir, "scenario.echo.toml", |w| w.write_all(scenario.echo().as_bytes()))
}

fn cmd_run(common: &Common, no_reference: bool, log: LogLevel) -> Result<(), Failure> {
    let mut scenario = load(common)?;
    if no_reference {
        scenario = scenario.rebuild(|f| {
            if let Some(run) = f.run.as_mut() {
                run.reference = false;
            }
        });
    }
    match run_trace(&scenario) {
        Ok(trace) => {
            write_run_outputs(&common.out, &scenario, &trace)?;
            if log >= LogLevel::Info {
                let m = compute_metrics(&trace);
                eprintln!("{scenario}: {} steps, E = {}, C = {}", m.steps, fmt_f64(m.e_norm), fmt_f64(m.c_norm));
            }
            Ok(())
        }
        Err(err) => {
            if let SimError::Diverged { trace, .. } = &err {
                write_run_outputs(&common.out, &scenario, trace)?;
            }
            Err(Failure {
                code: EXIT_NUMERIC,
                message: err.to_string(),
            })
        }
    }
}

fn cmd_sweep(common: &Common, jobs: usize, log: LogLevel) -> Result<(), Failure> {
    let scenario = load(common)?;
    let invalid = |message: &str| Failure {
        code: EXIT_INVALID,
        message: message.to_string(),
    };
    let grid = scenario.sweep.clone().ok_or_else(|| invalid("sweep: missing section"))?;
    if grid.scales.is_empty() {
        return Err(invalid("sweep.scales: grid is empty"));
    }
    if grid.seeds == 0 {
        return Err(invalid("sweep.seeds: must be ≥ 1"));
    }
    let seeds: Vec<u64> = (0..grid.seeds as u64).map(|i| scenario.seed + i).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure {
            code: EXIT_IO,
            message: e.to_string(),
        })?;
    let rows = pool
        .install(|| tradeoff_sweep(&scenario, &grid.scales, &seeds))
        .map_err(|e| invalid(&e.to_string()))?;
    write_file(&common.out, "sweep.csv", |w| write_sweep_csv(&rows, w))?;
    write_file(&common.out, "scenario.echo.toml", |w| w.write_all(scenario.echo().as_bytes()))?;
    if log >= LogLevel::Info {
        for r in &rows {
            let note = if r.failed_runs > 0 {
                format!(" ({} runs diverged)", r.failed_runs)
            } else {
                String::new()
            };
            eprintln!("scale {}: E = {} ± {}, C = {}{note}", fmt_f64(r.scale), fmt_f64(r.e_mean), fmt_f64(r.e_std), fmt_f64(r.c_mean));
        }
    }
    Ok(())
}

fn cmd_baseline(common: &Common, log: LogLevel) -> Result<(), Failure> {
    let scenario = load(common)?;
    let mut entries = scenario.baselines.clone();
    if entries.is_empty() {
        entries.push((1, None));
    }
    let mut lines = vec!["period,E,C,max_state".to_string()];
    let mut failure = None;
    for (period, gains) in &entries {
        let gains = gains.as_ref().unwrap_or(&scenario.gains);
        match run_baseline(&scenario, *period, gains) {
            Ok(r) => lines.push(format!("{},{},{},{}", period, fmt_f64(r.e_norm), fmt_f64(r.c_norm), fmt_f64(r.max_state))),
            Err(e) => {
                lines.push(format!("{period},nan,nan,nan"));
                failure.get_or_insert(Failure {
                    code: EXIT_NUMERIC,
                    message: format!("period {period}: {e}"),
                });
            }
        }
    }
    write_file(&common.out, "baseline.csv", |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    if log >= LogLevel::Info {
        for l in &lines[1..] {
            eprintln!("{l}");
        }
    }
    failure.map_or(Ok(()), Err)
}

fn cmd_verify(out: Option<&Path>, fault: Option<FaultArg>) -> Result<(), Failure> {
    let fault = fault.map(|f| match f {
        FaultArg::StrictTrigger => Fault::StrictTrigger,
        FaultArg::ResetNMinus1 => Fault::ResetSkipsLastAgent,
    });
    let report = run_verification(VerifyOptions { fault });
    print!("{report}");
    if let Some(dir) = out {
        write_file(dir, "verify.txt", |w| write!(w, "{report}"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(Failure {
            code: EXIT_IO,
            message: format!("failed checks: {}", failed.join(", ")),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    let log = cli.log_level;
    let result = match &cli.command {
        Command::Run { common, no_reference } => cmd_run(common, *no_reference, log),
        Command::Sweep { common, jobs } => cmd_sweep(common, *jobs, log),
        Command::Baseline { common } => cmd_baseline(common, log),
        Command::Verify { out, inject_fault } => cmd_verify(out.as_deref(), *inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
