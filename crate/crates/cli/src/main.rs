use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adakrig::experiment::{
    cmd_adaptive, cmd_calibrate, cmd_compare, cmd_design, cmd_diagnose, compare_markdown, ExperimentConfig,
    RunDiagnostics, Strategy,
};
use adakrig::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_UNCONVERGED: u8 = 4;
const EXIT_BUDGET: u8 = 5;

#[derive(Parser)]
#[command(name = "adakrig", version, about = "Kriging-based Bayesian inversion with adaptive designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); the built-in toy problem when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed; replaces the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Maximal number of forward-model runs.
    #[arg(long)]
    budget: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and evaluate the initial maximin LHD.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the metamodels on a design and sample the posterior.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Evaluated design CSV (`z1..zQ,h1..hp`); the initial LHD when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Sequential design followed by calibration.
    Adaptive {
        #[command(flatten)]
        common: Common,
        /// mmse, wimse or ecd.
        #[arg(long)]
        strategy: Option<String>,
        /// WIMSE exponent.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// KL divergence of each run's posterior to a benchmark posterior.
    Compare {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        benchmark: PathBuf,
        /// Directory receiving compare.csv and compare.md.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print R-hat history, acceptance rates and the Q2 table of a run.
    Diagnose {
        run: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Budget { .. } => EXIT_BUDGET,
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Argument(_)
        | Error::Dimension { .. }
        | Error::OutsideDomain { .. }
        | Error::Elicitation => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(budget) = common.budget {
        config.budget = budget;
    }
    Ok(config)
}

fn set_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config {
                field: "--threads".into(),
                message: "must be positive".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(e.to_string()))?;
    }
    Ok(())
}

fn report_run(d: &RunDiagnostics, out: &Path) -> u8 {
    let rhat = d.rhat_history.last().map_or_else(|| "n/a".to_string(), |(_, r)| format!("{r:.4}"));
    let q2 = d.q2.map_or_else(|| "n/a".to_string(), |q| format!("{q:.4}"));
    println!(
        "{}: design {} points ({} forward runs), converged: {}, iterations: {}, last R-hat: {rhat}, Q2: {q2}",
        out.display(),
        d.design_size,
        d.forward_runs,
        d.converged,
        d.iterations
    );
    if d.converged {
        0
    } else {
        eprintln!("warning: chains did not converge; draws written with converged:false");
        EXIT_UNCONVERGED
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Design { common } => {
            set_threads(common.threads)?;
            let config = load(&common)?;
            let r = cmd_design(&config, &common.out)?;
            println!(
                "{}: {} points, delta_D = {:.6}, latin: {}",
                common.out.display(),
                r.size,
                r.min_intersite_distance,
                r.latin
            );
            Ok(0)
        }
        Command::Calibrate { common, design } => {
            set_threads(common.threads)?;
            let config = load(&common)?;
            let d = cmd_calibrate(&config, design.as_deref(), &common.out)?;
            Ok(report_run(&d, &common.out))
        }
        Command::Adaptive { common, strategy, alpha } => {
            set_threads(common.threads)?;
            let mut config = load(&common)?;
            if let Some(s) = strategy {
                config.strategy = s.parse::<Strategy>()?;
            }
            if let Some(a) = alpha {
                config.wimse.alpha = a;
            }
            let d = cmd_adaptive(&config, &common.out)?;
            Ok(report_run(&d, &common.out))
        }
        Command::Compare {
            runs,
            benchmark,
            out,
            threads,
        } => {
            set_threads(threads)?;
            let rows = cmd_compare(&runs, &benchmark, out.as_deref())?;
            print!("{}", compare_markdown(&rows, &benchmark));
            Ok(0)
        }
        Command::Diagnose { run, threads } => {
            set_threads(threads)?;
            print!("{}", cmd_diagnose(&run)?.render());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
