use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use poisonlab::fixed_point::SolverConfig;
use poisonlab::harness::run::{decompose_external, DecomposeArgs};
use poisonlab::harness::{run, validate, RunOptions, SweepConfig};
use poisonlab::loss::LossModel;
use poisonlab::Error;

#[derive(Parser)]
#[command(name = "poisonlab", version, about = "Backdoor poisoning sweeps for ridge-regularized GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
}

impl From<LossArg> for LossModel {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Squared => LossModel::Squared,
            LossArg::Logistic => LossModel::Logistic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and its input files without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the four-term split of the margin variance for CSV moments.
    Decompose {
        #[arg(long)]
        mean: PathBuf,
        #[arg(long)]
        cov: PathBuf,
        /// Defaults to the minimum-eigenvalue direction of the covariance.
        #[arg(long)]
        trigger: Option<PathBuf>,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = LossArg::Logistic)]
        loss: LossArg,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn fail(e: Error) -> ExitCode {
    let code = exit_code(&e);
    fail_with(e, code)
}

fn fail_with(e: Error, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, threads, seed } => {
            let cfg = match SweepConfig::from_file(&config) {
                Ok(c) => c,
                // An unreadable config is a configuration error.
                Err(e) => return fail_with(e, EXIT_CONFIG),
            };
            match run(&cfg, &RunOptions { out, threads, seed }) {
                Ok(report) => {
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                    if report.flagged_points > 0 {
                        eprintln!("warning: {} sweep point(s) flagged; see the converged column", report.flagged_points);
                    }
                    for f in &report.files {
                        println!("wrote {} ({} rows)", f.path.display(), f.rows);
                    }
                    println!("wrote {}", report.manifest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { config } => {
            match SweepConfig::from_file(&config).and_then(|c| validate(&c).map(|_| c)) {
                Ok(c) => {
                    println!("ok: mode {:?}, {} alpha value(s)", c.mode, c.alpha_grid.values().len());
                    ExitCode::SUCCESS
                }
                Err(e) => fail_with(e, EXIT_CONFIG),
            }
        }
        Command::Decompose {
            mean,
            cov,
            trigger,
            lambda,
            phi,
            n,
            alpha,
            loss,
        } => {
            let args = DecomposeArgs {
                mean: &mean,
                cov: &cov,
                trigger: trigger.as_deref(),
                lambda,
                phi,
                n,
                alpha,
                loss: loss.into(),
            };
            match decompose_external(args, &SolverConfig::default()) {
                Ok(d) => {
                    if let Some(norm) = d.trigger_norm {
                        if (norm - 1.0).abs() > 1e-12 {
                            eprintln!("note: trigger rescaled from norm {norm} to 1");
                        }
                    }
                    println!("{}", d.decomposition);
                    println!("kappa = {:.6}, iterations = {}", d.kappa, d.state.iterations);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
