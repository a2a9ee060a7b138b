use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ist_core::experiments::{
    emit_plot, read_config_file, read_records_dir, run_experiment, run_sweep, verify_suite, ExperimentConfig,
    SweepConfig,
};
use ist_core::Error;

const EXIT_USAGE: u8 = 64;
const EXIT_RUNTIME: u8 = 1;
const SEED_ENV: &str = "IST_OPT_SEED";

#[derive(Parser)]
#[command(name = "ist-opt", version, about = "Riemannian optimization on the indefinite Stiefel manifold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one benchmark instance and write its convergence CSV.
    Run(RunArgs),
    /// Run every (metric, rho, method) cell of a grid in parallel.
    Sweep(SweepArgs),
    /// Render the CSV files of a directory as an SVG convergence plot.
    Plot(PlotArgs),
    /// Check the analytic geometry against the finite-difference oracles.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    pplus: Option<String>,
    /// g1 or g2
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// sd, cg, hybrid or newton
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long = "outer-tol")]
    outer_tol: Option<String>,
    #[arg(long = "inner-tol")]
    inner_tol: Option<String>,
    #[arg(long = "switch-tol")]
    switch_tol: Option<String>,
    #[arg(long = "max-outer")]
    max_outer: Option<String>,
    #[arg(long = "max-inner")]
    max_inner: Option<String>,
    /// Output directory for the CSV file.
    #[arg(long)]
    out: Option<String>,
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fill the time_ms column with wall-clock times.
    #[arg(long = "record-time")]
    record_time: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let fields: [(&'static str, &Option<String>); 13] = [
            ("n", &self.n),
            ("p", &self.p),
            ("pplus", &self.pplus),
            ("metric", &self.metric),
            ("rho", &self.rho),
            ("method", &self.method),
            ("seed", &self.seed),
            ("outer-tol", &self.outer_tol),
            ("inner-tol", &self.inner_tol),
            ("switch-tol", &self.switch_tol),
            ("max-outer", &self.max_outer),
            ("max-inner", &self.max_inner),
            ("out", &self.out),
        ];
        let mut out: Vec<_> = fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect();
        if self.record_time {
            out.push(("record-time", "true"));
        }
        out
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Flat key=value file; accepts the run keys plus metrics, rhos and methods lists.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output directory of the config file.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding the CSV files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSpec(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn env_seed() -> Result<Option<String>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
            Ok(Some(v.trim().to_string()))
        }
        _ => Ok(None),
    }
}

fn run(args: &RunArgs) -> Result<u8, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let map = read_config_file(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
    }
    for (k, v) in args.overrides() {
        cfg.set(k, v)?;
    }
    if let Some(seed) = env_seed()? {
        cfg.set("seed", &seed)?;
    }
    cfg.validate()?;
    let outcome = run_experiment(&cfg)?;
    let last = outcome.trace.last();
    println!(
        "{} seed={} status={} iterations={} f={:.16e} gradnorm={:.3e} csv={}",
        cfg.run_name(),
        cfg.seed,
        outcome.trace.status.name(),
        last.index,
        last.f,
        last.gradnorm,
        outcome.csv_path.display()
    );
    Ok(outcome.exit_code() as u8)
}

fn sweep(args: &SweepArgs) -> Result<u8, Failure> {
    let map = read_config_file(&args.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    let mut sweep = SweepConfig::from_map(&map)?;
    if let Some(out) = &args.out {
        sweep.base.set("out", out)?;
    }
    if let Some(seed) = env_seed()? {
        sweep.base.set("seed", &seed)?;
    }
    for cell in sweep.cells() {
        cell.validate()?;
    }
    let started = std::time::Instant::now();
    let results = run_sweep(&sweep);
    println!(
        "{:<22} {:>13} {:>6} {:>7} {:>11} {:>10}",
        "run", "status", "iters", "newton", "gradnorm", "stationary"
    );
    let mut failed = false;
    for (cell, result) in sweep.cells().iter().zip(results) {
        match result {
            Ok(o) => {
                let last = o.trace.last();
                println!(
                    "{:<22} {:>13} {:>6} {:>7} {:>11.3e} {:>10.2e}",
                    cell.run_name(),
                    o.trace.status.name(),
                    last.index,
                    o.trace.newton_steps(),
                    last.gradnorm,
                    o.stationarity.0
                );
            }
            Err(e) => {
                failed = true;
                println!("{:<22} error: {e}", cell.run_name());
            }
        }
    }
    println!("wall-clock {:.1} s", started.elapsed().as_secs_f64());
    Ok(if failed { EXIT_RUNTIME } else { 0 })
}

fn plot(args: &PlotArgs) -> Result<u8, Failure> {
    let records = read_records_dir(&args.input)?;
    if records.is_empty() {
        return Err(Failure::Usage(format!("no CSV files in {}", args.input.display())));
    }
    emit_plot(&records, &args.out)?;
    println!("wrote {} ({} series)", display(&args.out), records.len());
    Ok(0)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn verify(args: &VerifyArgs) -> Result<u8, Failure> {
    let seed = match env_seed()? {
        Some(s) => s.parse().expect("validated above"),
        None => args.seed,
    };
    let checks = verify_suite(seed)?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!(
            "{} {:<width$} {:>10.3e} < {:.0e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    let failures = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failures} failed", checks.len());
    Ok(if failures == 0 { 0 } else { EXIT_RUNTIME })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
