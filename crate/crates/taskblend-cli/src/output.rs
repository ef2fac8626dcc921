//! Single-run execution and its on-disk outputs: run.csv, summary.json,
//! and the optional dataset.csv dump. Output files are only created after
//! the run has finished, so a validation or divergence failure leaves no
//! partial files behind.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use taskblend::config::ExperimentConfig;
use taskblend::trainer::train;

#[derive(Debug)]
pub enum RunError {
    Diverged(String),
    Other(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Diverged(m) | RunError::Other(m) => f.write_str(m),
        }
    }
}

/// JSON summary written next to the CSV log: the resolved config echo plus
/// the run's end state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
    pub initial_losses: Vec<f64>,
    pub final_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_dist_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_dist_sq: Option<f64>,
    pub mean_final_loss: f64,
    pub wall_secs: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Builds the problem, trains one seed, and writes run.csv + summary.json
/// (+ dataset.csv when asked) into `dir`.
pub fn execute_single(
    config: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    dump_data: bool,
) -> Result<RunSummary, RunError> {
    let problem = config
        .problem
        .build(seed)
        .map_err(|e| RunError::Other(e.to_string()))?;
    let train_config = config
        .train_config(seed)
        .map_err(|e| RunError::Other(e.to_string()))?;
    let record = train(problem.as_ref(), &train_config)?;

    let summary = RunSummary {
        config: config.clone(),
        seed,
        strategy: config.strategy.kind.clone(),
        distribution: config.distribution.clone(),
        initial_losses: record.initial_full_losses.clone(),
        final_losses: record.final_full_losses.clone(),
        initial_dist_sq: record.initial_dist_sq,
        final_dist_sq: record.final_dist_sq,
        mean_final_loss: record.mean_final_loss(),
        wall_secs: record.wall_secs,
        diagnostics: record.diagnostics.clone(),
    };

    std::fs::create_dir_all(dir)
        .map_err(|e| RunError::Other(format!("creating {}: {e}", dir.display())))?;
    let write = |name: &str, contents: &str| -> Result<(), RunError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| RunError::Other(format!("writing {}: {e}", path.display())))
    };
    write("run.csv", &record.to_csv())?;
    write(
        "summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    if dump_data {
        write("dataset.csv", &problem.dataset().to_csv())?;
    }
    Ok(summary)
}
