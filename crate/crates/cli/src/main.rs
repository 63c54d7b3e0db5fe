use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsd_core::harness::{self, csv, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "qsd", version, about = "Quantum state diffusion experiments for Lindblad systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density-matrix RK4 oracle on the macro grid.
    Reference(Common),
    /// Stochastic ensemble: per-time mean, std and 95% half-width.
    Ensemble(Common),
    /// Error at t_final versus step size, with a fitted weak order.
    Converge(Common),
    /// Monte-Carlo check of the stochastic integral covariances.
    AuditIntegrals(Audit),
    /// Whether the ensemble stays inside the norm band for each step size.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// free, driven, two-level or custom
    #[arg(long)]
    model: Option<String>,
    /// order1, order2, linear1, linear2 or reference
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    t_final: Option<String>,
    /// Macro interval at which observables are recorded.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated: energy, position, population:<n>
    #[arg(long)]
    obs: Option<String>,
    /// Step of the RK4 oracle.
    #[arg(long)]
    dt_ref: Option<String>,
    /// Comma-separated step sizes for `converge` and `stability`.
    #[arg(long)]
    dts: Option<String>,
    /// Any other config key, e.g. `--set gamma0=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// CSV destination; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Audit {
    #[arg(long, default_value_t = 2)]
    n_lindblad: usize,
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

const MIN_AUDIT_DRAWS: u64 = 100_000;

impl Common {
    fn config(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("model", &self.model),
            ("solver", &self.solver),
            ("dt", &self.dt),
            ("t_final", &self.t_final),
            ("tau", &self.tau),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("obs", &self.obs),
            ("dt_ref", &self.dt_ref),
            ("dts", &self.dts),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, HarnessError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Reference(c) => {
            let cfg = c.config()?;
            let r = harness::run_reference(&cfg)?;
            if let Some(&(t, v)) = r.series.positivity_warnings.first() {
                eprintln!(
                    "warning: density matrix eigenvalue {v:e} at t = {t} ({} times in total)",
                    r.series.positivity_warnings.len()
                );
            }
            csv::write_reference(output(cfg.out.as_ref())?, &r)
        }
        Command::Ensemble(c) => {
            let cfg = c.config()?;
            let s = harness::run_ensemble(&cfg)?;
            csv::write_ensemble(output(cfg.out.as_ref())?, &s)
        }
        Command::Converge(c) => {
            let cfg = c.config()?;
            match harness::run_convergence(&cfg, &cfg.dts) {
                Ok(report) => {
                    let (slope, intercept) = report.fit.expect("fit present on success");
                    eprintln!(
                        "{} at t = {}: oracle {}, fitted order {slope:.3} (intercept {intercept:.3}) over {} points",
                        report.observable,
                        report.t_final,
                        report.oracle,
                        report.n_bias_dominated()
                    );
                    csv::write_convergence(output(cfg.out.as_ref())?, &report)
                }
                Err((err, Some(report))) => {
                    csv::write_convergence(output(cfg.out.as_ref())?, &report)?;
                    Err(err)
                }
                Err((err, None)) => Err(err),
            }
        }
        Command::AuditIntegrals(a) => {
            if a.draws < MIN_AUDIT_DRAWS {
                return Err(HarnessError::Config(format!(
                    "the audit needs at least {MIN_AUDIT_DRAWS} draws, got {}",
                    a.draws
                )));
            }
            let r = harness::run_integral_audit(a.n_lindblad, a.dt, a.draws, a.seed)?;
            let failed = r.failures().count();
            eprintln!("{} of {} cells within tolerance", r.cells.len() - failed, r.cells.len());
            csv::write_audit(output(a.out.as_ref())?, &r)
        }
        Command::Stability(c) => {
            let cfg = c.config()?;
            let rows = harness::run_stability_probe(&cfg, &cfg.dts)?;
            csv::write_stability(output(cfg.out.as_ref())?, &rows)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
