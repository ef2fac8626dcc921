//! Sweep execution: isolated worker threads pull cells from a shared
//! queue; each cell is a complete single run writing into its own
//! directory, so per-cell outputs are identical at any parallelism.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use taskblend::config::SweepCell;

use crate::output::execute_single;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub dir: String,
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepIndex {
    pub entries: Vec<IndexEntry>,
}

/// Requested worker count, capped by the TASKBLEND_THREADS env var.
pub fn effective_parallelism(requested: usize) -> usize {
    let requested = requested.max(1);
    match std::env::var("TASKBLEND_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) if cap >= 1 => requested.min(cap),
        _ => requested,
    }
}

/// Runs every cell (up to `workers` concurrently), writes index.json under
/// `base_dir`, and returns whether all cells succeeded. Cell failures do
/// not abort the remaining cells.
pub fn run_sweep(
    base_dir: &str,
    cells: Vec<SweepCell>,
    workers: usize,
    quiet: bool,
) -> Result<bool, String> {
    let total = cells.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<IndexEntry>>> = Mutex::new(vec![None; total]);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(total).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let cell = &cells[i];
                let config = cell.config.as_ref().expect("expanded cell has a config");
                let dir = PathBuf::from(&config.run.output_dir);
                let entry = match execute_single(config, cell.seed, &dir, false) {
                    Ok(_) => {
                        if !quiet {
                            eprintln!("cell {}/{total} ok: {}", i + 1, cell.name);
                        }
                        IndexEntry {
                            name: cell.name.clone(),
                            dir: config.run.output_dir.clone(),
                            strategy: cell.strategy.clone(),
                            distribution: cell.distribution.clone(),
                            seed: cell.seed,
                            status: "ok".to_string(),
                            error: None,
                        }
                    }
                    Err(e) => {
                        eprintln!("cell {}/{total} FAILED: {}: {e}", i + 1, cell.name);
                        IndexEntry {
                            name: cell.name.clone(),
                            dir: config.run.output_dir.clone(),
                            strategy: cell.strategy.clone(),
                            distribution: cell.distribution.clone(),
                            seed: cell.seed,
                            status: "failed".to_string(),
                            error: Some(e.to_string()),
                        }
                    }
                };
                results.lock().expect("results lock")[i] = Some(entry);
            });
        }
    });

    let entries: Vec<IndexEntry> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|e| e.expect("every cell produced an entry"))
        .collect();
    let all_ok = entries.iter().all(|e| e.status == "ok");
    let index = SweepIndex { entries };
    std::fs::create_dir_all(base_dir).map_err(|e| format!("creating {base_dir}: {e}"))?;
    let path = Path::new(base_dir).join("index.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&index).expect("index serializes"),
    )
    .map_err(|e| format!("writing {}: {e}", path.display()))?;
    Ok(all_ok)
}
