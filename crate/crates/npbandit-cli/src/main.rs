//! Command-line experiment driver.
//!
//! `npbandit <experiment> --config <path> [--out <dir>] [--seeds a..b]
//! [--jobs k]` runs one batch experiment and writes CSV plus a plain-text
//! report into the output directory. Exit codes: 0 on success, 2 on a
//! configuration problem, 3 on a numerical or I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npbandit::{parse_seeds, run_experiment, Error, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "npbandit",
    version,
    about = "Batch experiments for doubly-nonparametric reward learning",
    long_about = "Runs one experiment described by a flat key-value config file and \
writes deterministic CSV data plus a plain-text report. Every CSV starts with a \
`# config_hash=<sha256>` line; re-running the same effective configuration \
reproduces the data rows byte for byte."
)]
struct Cli {
    #[command(subcommand)]
    experiment: ExperimentCommand,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment config file (flat `key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Output directory override; defaults to the config's `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed override: an inclusive range `a..b` or a comma list.
    #[arg(long, value_name = "A..B")]
    seeds: Option<String>,

    /// Worker thread count; defaults to the number of cores.
    #[arg(long, value_name = "K")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Mean excess risk against the query budget, with a fitted slope.
    ///
    /// CSV columns: n, mean_delta, stderr.
    Scaling(CommonArgs),

    /// Excess-risk curves across instance widths.
    ///
    /// CSV columns: d, n, mean_delta, stderr.
    #[command(name = "dim_sweep")]
    DimSweep(CommonArgs),

    /// Designed plug-in vs random queries vs a confidence-bound bandit.
    ///
    /// CSV columns: method, n, mean_delta, stderr.
    #[command(name = "compare_baselines")]
    CompareBaselines(CommonArgs),

    /// Cumulative-regret traces on a kernel cover.
    ///
    /// CSV columns: method, horizon, mean_cumulative_regret, stderr. Also
    /// writes per-seed cover files (index, x_0, ...) and Gram matrix files
    /// (k_0, ..., one row per cover point).
    Kmab(CommonArgs),

    /// Deterministic schedule table: bound and rate along the budget grid.
    ///
    /// CSV columns: n, j, lambda_reg, bound, rate.
    Bounds(CommonArgs),
}

impl ExperimentCommand {
    fn kind(&self) -> ExperimentKind {
        match self {
            Self::Scaling(_) => ExperimentKind::Scaling,
            Self::DimSweep(_) => ExperimentKind::DimSweep,
            Self::CompareBaselines(_) => ExperimentKind::CompareBaselines,
            Self::Kmab(_) => ExperimentKind::Kmab,
            Self::Bounds(_) => ExperimentKind::Bounds,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Self::Scaling(a)
            | Self::DimSweep(a)
            | Self::CompareBaselines(a)
            | Self::Kmab(a)
            | Self::Bounds(a) => a,
        }
    }
}

fn load_config(command: &ExperimentCommand) -> Result<ExperimentConfig, Error> {
    let args = command.args();
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if config.experiment != command.kind() {
        return Err(Error::Config(format!(
            "config declares experiment `{}` but the `{}` subcommand was invoked",
            config.experiment,
            command.kind()
        )));
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seeds(seeds)?;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.experiment.args().jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("could not size the worker pool: {e}")))?;
    }
    let config = load_config(&cli.experiment)?;
    let summary = run_experiment(&config)?;
    println!("{}", summary.headline);
    for file in &summary.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("npbandit: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
