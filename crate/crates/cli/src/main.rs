use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shk::config::ExperimentConfig;
use shk::experiments::execute;
use shk::verify;
use shk::CliError;

/// Exit codes: 0 all checks passed, 1 a check failed, 2 bad config or
/// usage, 3 numerical failure, 4 I/O error.
#[derive(Parser)]
#[command(name = "shk", version, about = "Coarse-grained stochastic acceleration experiments", after_help = "Exit codes: 0 all checks passed, 1 a check failed, 2 bad config or usage, 3 numerical failure, 4 I/O error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; falls back to the config, then SHK_WORKERS, then all cores.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; falls back to the config, then `shk-out/<kind>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in acceptance suite.
    Verify {
        /// One of: all, quick, brackets, pulse, two-particle, karney, lorentz,
        /// asymptotic, energy, witness, kl, reproducibility.
        suite: String,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn env_workers() -> Result<Option<usize>, CliError> {
    match std::env::var("SHK_WORKERS") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("SHK_WORKERS must be a whole number, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let mut c = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            let workers = match workers.or(c.workers) {
                Some(w) => Some(w),
                None => env_workers()?,
            };
            c.workers = workers;
            c.validate()?;
            let out = out
                .or_else(|| c.out.clone())
                .unwrap_or_else(|| PathBuf::from("shk-out").join(c.kind.name()));
            let report = execute(&c, &out, workers.unwrap_or(0))?;
            for check in &report.checks {
                println!("{}", check.line());
            }
            println!(
                "{}: {} ({})",
                c.kind.name(),
                if report.passed { "PASS" } else { "FAIL" },
                out.display()
            );
            Ok(report.passed)
        }
        Command::Verify { suite, workers } => {
            let ids = verify::suite(&suite)
                .ok_or_else(|| CliError::Config(format!("unknown suite {suite:?}")))?;
            let workers = match workers {
                Some(w) => Some(w),
                None => env_workers()?,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.unwrap_or(0))
                .build()
                .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
            let mut all = true;
            for id in ids {
                let r = pool.install(|| verify::criterion(id))?;
                println!("{}", r.summary());
                for line in &r.details {
                    println!("    {line}");
                }
                all &= r.passed;
            }
            Ok(all)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("shk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
