//! Sweep aggregation: per-method mean final losses over seeds and the
//! relative-improvement score against the equal-weighting baseline,
//! emitted as a text table and report.csv.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use taskblend::metrics::{delta_p, MethodResults, MetricSpec};
use taskblend::trainer::fmt_f64;

use crate::output::RunSummary;
use crate::sweep::SweepIndex;
use crate::EXIT_CONFIG;

struct MethodRow {
    method: String,
    delta_p: f64,
    mean_losses: Vec<f64>,
    seeds: usize,
}

pub fn cmd_report(index_path: &Path) -> ExitCode {
    match build_report(index_path) {
        Ok((table, csv, out_path)) => {
            print!("{table}");
            if let Err(e) = std::fs::write(&out_path, csv) {
                eprintln!("error: writing {}: {e}", out_path.display());
                return ExitCode::from(EXIT_CONFIG);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn method_key(strategy: &str, distribution: &Option<String>) -> String {
    match distribution {
        Some(d) => format!("{strategy}({d})"),
        None => strategy.to_string(),
    }
}

fn build_report(index_path: &Path) -> Result<(String, String, std::path::PathBuf), String> {
    let text = std::fs::read_to_string(index_path)
        .map_err(|e| format!("reading {}: {e}", index_path.display()))?;
    let index: SweepIndex =
        serde_json::from_str(&text).map_err(|e| format!("parsing sweep index: {e}"))?;
    let base = index_path.parent().unwrap_or_else(|| Path::new("."));

    // Collect per-method final losses across seeds.
    let mut per_method: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for entry in index.entries.iter().filter(|e| e.status == "ok") {
        let summary_path = Path::new(&entry.dir).join("summary.json");
        // Cell dirs may be recorded relative to the sweep root.
        let summary_text = std::fs::read_to_string(&summary_path)
            .or_else(|_| std::fs::read_to_string(base.join(&entry.name).join("summary.json")))
            .map_err(|e| format!("reading {}: {e}", summary_path.display()))?;
        let summary: RunSummary =
            serde_json::from_str(&summary_text).map_err(|e| format!("parsing summary: {e}"))?;
        per_method
            .entry(method_key(&entry.strategy, &entry.distribution))
            .or_default()
            .push(summary.final_losses);
    }
    if per_method.is_empty() {
        return Err("sweep index contains no successful cells".to_string());
    }

    let mean_losses = |runs: &Vec<Vec<f64>>| -> Vec<f64> {
        let tasks = runs[0].len();
        (0..tasks)
            .map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / runs.len() as f64)
            .collect()
    };

    let baseline_runs = per_method
        .get("ew")
        .ok_or_else(|| "report requires an ew baseline cell in the sweep".to_string())?;
    let baseline = mean_losses(baseline_runs);
    let tasks = baseline.len();
    let spec = MetricSpec::losses(tasks);
    let baseline_results = MethodResults {
        values: baseline.iter().map(|&l| vec![l]).collect(),
    };

    let mut rows = Vec::new();
    for (method, runs) in &per_method {
        let losses = mean_losses(runs);
        let results = MethodResults {
            values: losses.iter().map(|&l| vec![l]).collect(),
        };
        let dp = delta_p(&results, &baseline_results, &spec)
            .map_err(|e| format!("delta_p for {method}: {e}"))?;
        rows.push(MethodRow {
            method: method.clone(),
            delta_p: dp,
            mean_losses: losses,
            seeds: runs.len(),
        });
    }

    // Table: ew first, then by descending improvement.
    rows.sort_by(|a, b| {
        (b.method == "ew")
            .cmp(&(a.method == "ew"))
            .then(b.delta_p.total_cmp(&a.delta_p))
    });

    let mut table = format!("{:<28} {:>8} {:>6}", "method", "delta_p", "seeds");
    for t in 1..=tasks {
        table.push_str(&format!(" {:>12}", format!("loss_{t}")));
    }
    table.push('\n');
    for row in &rows {
        table.push_str(&format!(
            "{:<28} {:>+8.2} {:>6}",
            row.method, row.delta_p, row.seeds
        ));
        for loss in &row.mean_losses {
            table.push_str(&format!(" {loss:>12.4e}"));
        }
        table.push('\n');
    }

    let mut csv = String::from("method,delta_p,seeds");
    for t in 1..=tasks {
        csv.push_str(&format!(",mean_loss_{t}"));
    }
    csv.push('\n');
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{}",
            row.method,
            fmt_f64(row.delta_p),
            row.seeds
        ));
        for loss in &row.mean_losses {
            csv.push_str(&format!(",{}", fmt_f64(*loss)));
        }
        csv.push('\n');
    }

    Ok((table, csv, base.join("report.csv")))
}
