//! taskblend command line: run single experiments, sweep strategies ×
//! distributions × seeds, execute the verification suites, and aggregate
//! sweep results into a relative-improvement report.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 run
//! divergence, 4 sweep finished with failed cells.

mod output;
mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use taskblend::config::{ExperimentConfig, SeedSpec, SweepManifest};
use taskblend::trainer::TrainError;
use taskblend::verify::{self, Suite};

use output::execute_single;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_SWEEP_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "taskblend",
    about = "Multi-task loss weighting experiments on synthetic problems",
    version
)]
struct Cli {
    /// Override the config's seed(s) with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config (JSON), writing run.csv and summary.json.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Also dump the generated dataset as dataset.csv.
        #[arg(long)]
        dump_data: bool,
    },
    /// Expand a sweep manifest and run every cell.
    Sweep {
        /// Path to the sweep manifest (JSON).
        manifest: PathBuf,
        /// Worker threads; capped by TASKBLEND_THREADS when set.
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Run a verification suite: invariants, theorem1, rate, noise,
    /// escape, parity, or all.
    Verify {
        suite: String,
        /// Also write the per-check reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Aggregate a sweep index into a relative-improvement table.
    Report {
        /// Path to a sweep index.json.
        index: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            ref config,
            dump_data,
        } => cmd_run(&cli, config, dump_data),
        Command::Sweep {
            ref manifest,
            parallelism,
        } => cmd_sweep(&cli, manifest, parallelism),
        Command::Verify {
            ref suite,
            ref json,
        } => {
            // --json wins; plain --out directs the report into that dir.
            let json_path = json
                .clone()
                .or_else(|| cli.out.as_ref().map(|d| d.join("verify_report.json")));
            cmd_verify(suite, json_path.as_deref())
        }
        Command::Report { ref index } => report::cmd_report(index),
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn cmd_run(cli: &Cli, config_path: &std::path::Path, dump_data: bool) -> ExitCode {
    let mut config = match ExperimentConfig::from_file(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = SeedSpec::One(seed);
    }
    if let Some(out) = &cli.out {
        config.run.output_dir = out.display().to_string();
    }
    if let Err(e) = config.validate() {
        return fail(EXIT_CONFIG, e);
    }

    let seeds = config.run.seed.seeds();
    let multi = seeds.len() > 1;
    for seed in seeds {
        let dir = if multi {
            PathBuf::from(&config.run.output_dir).join(format!("seed_{seed}"))
        } else {
            PathBuf::from(&config.run.output_dir)
        };
        match execute_single(&config, seed, &dir, dump_data) {
            Ok(summary) => {
                if !cli.quiet {
                    eprintln!(
                        "run seed {seed}: mean final loss {:.6e}, wall {:.2}s -> {}",
                        summary.mean_final_loss,
                        summary.wall_secs,
                        dir.display()
                    );
                }
            }
            Err(output::RunError::Diverged(e)) => return fail(EXIT_DIVERGED, e),
            Err(e) => return fail(EXIT_CONFIG, e),
        }
    }
    ExitCode::SUCCESS
}

fn cmd_sweep(cli: &Cli, manifest_path: &std::path::Path, parallelism: usize) -> ExitCode {
    let mut manifest = match SweepManifest::from_file(manifest_path) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(out) = &cli.out {
        manifest.base.run.output_dir = out.display().to_string();
    }
    // A --seed override narrows the sweep to that single seed.
    if let Some(seed) = cli.seed {
        manifest.seeds = vec![seed];
    }
    let cells = match manifest.expand() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let workers = sweep::effective_parallelism(parallelism);
    match sweep::run_sweep(&manifest.base.run.output_dir, cells, workers, cli.quiet) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more sweep cells failed (see index.json)");
            ExitCode::from(EXIT_SWEEP_FAILED)
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn cmd_verify(suite_name: &str, json_path: Option<&std::path::Path>) -> ExitCode {
    let suite: Suite = match suite_name.parse() {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let reports = verify::run_suite(suite);
    for report in &reports {
        println!("{}", report.line());
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", reports.len());
    if let Some(path) = json_path {
        if let Some(parent) = path.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        match serde_json::to_string_pretty(&reports) {
            Ok(text) => {
                if let Err(e) = std::fs::write(path, text) {
                    return fail(EXIT_CONFIG, format!("writing {}: {e}", path.display()));
                }
            }
            Err(e) => return fail(EXIT_CONFIG, e),
        }
    }
    if passed == reports.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

impl From<TrainError> for output::RunError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => output::RunError::Diverged(e.to_string()),
            other => output::RunError::Other(other.to_string()),
        }
    }
}
