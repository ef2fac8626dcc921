//! Synthetic multi-task problem families: per-task datasets, batch
//! sampling, exact analytic gradients, and closed-form optima where they
//! exist. Everything is immutable after construction and pure to evaluate.

pub mod landscape;
pub mod quadratic;
pub mod toy_mlp;

pub use landscape::{LandscapeMinima, LandscapeProblem, LandscapeSpec, MinimumInfo};
pub use quadratic::{quadratic_optimum, QuadraticSpec, QuadraticTaskFamily};
pub use toy_mlp::{ToyMlpProblem, ToyMlpSpec};

use thiserror::Error;

use crate::math::Matrix;
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem construction: {0}")]
    Construction(String),
    #[error("dataset shape mismatch: {0}")]
    DatasetShape(String),
    #[error("dataset csv parse error at line {line}: {reason}")]
    DatasetCsv { line: usize, reason: String },
}

/// Model parameters: one shared vector θ plus one vector ψ_t per task
/// (empty for families without task-specific parameters).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Params {
    pub shared: Vec<f64>,
    pub task: Vec<Vec<f64>>,
}

/// Per-task index lists into each task's dataset, sampled i.i.d. with
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<Vec<usize>>,
}

impl Batch {
    /// The whole dataset as one batch.
    pub fn full(n: usize, tasks: usize) -> Self {
        Batch {
            indices: vec![(0..n).collect(); tasks],
        }
    }

    pub fn size(&self) -> usize {
        self.indices.first().map_or(0, Vec::len)
    }
}

/// Draws a size-B batch per task, i.i.d. uniform with replacement, task-major
/// draw order. Must be fed the data stream.
pub fn sample_batch(n: usize, tasks: usize, batch_size: usize, rng: &mut RngStream) -> Batch {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let indices = (0..tasks)
        .map(|_| (0..batch_size).map(|_| rng.index(n)).collect())
        .collect();
    Batch { indices }
}

/// Losses and exact gradients of one batch evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Per-task batch losses, length T.
    pub losses: Vec<f64>,
    /// Per-task gradients w.r.t. the shared parameters, T × shared_dim.
    pub shared_grads: Matrix,
    /// Per-task gradients w.r.t. that task's own parameters.
    pub task_grads: Vec<Vec<f64>>,
}

pub trait MultiTaskProblem {
    fn tasks(&self) -> usize;
    fn shared_dim(&self) -> usize;
    fn task_dim(&self, task: usize) -> usize;
    fn samples_per_task(&self) -> usize;

    /// Initial parameters; consumes the init stream (deterministic families
    /// ignore it).
    fn init_params(&self, rng: &mut RngStream) -> Params;

    /// Batch losses and exact analytic gradients at `params`.
    fn evaluate_batch(&self, params: &Params, batch: &Batch) -> Evaluation;

    /// Full-dataset per-task losses.
    fn full_losses(&self, params: &Params) -> Vec<f64> {
        self.evaluate_batch(params, &Batch::full(self.samples_per_task(), self.tasks()))
            .losses
    }

    /// Shared-parameter optimum of the `weights`-mixed empirical loss, for
    /// families with a closed form.
    fn optimum(&self, weights: &[f64]) -> Option<Vec<f64>>;

    /// The generated per-task datasets, for CSV inspection.
    fn dataset(&self) -> Dataset;
}

/// A problem's per-task data in a family-independent layout: feature rows
/// per task, plus target rows for supervised families.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Matrix>,
    pub targets: Option<Vec<Matrix>>,
}

impl Dataset {
    /// CSV with header `task,index,x_0..,[y_0..]`, floats at 17 significant
    /// digits so a dump/reload round-trip is exact.
    pub fn to_csv(&self) -> String {
        let feat_cols = self.features.first().map_or(0, Matrix::cols);
        let target_cols = self
            .targets
            .as_ref()
            .and_then(|t| t.first())
            .map_or(0, Matrix::cols);
        let mut out = String::from("task,index");
        for j in 0..feat_cols {
            out.push_str(&format!(",x_{j}"));
        }
        for j in 0..target_cols {
            out.push_str(&format!(",y_{j}"));
        }
        out.push('\n');
        for (t, feats) in self.features.iter().enumerate() {
            for i in 0..feats.rows() {
                out.push_str(&format!("{t},{i}"));
                for j in 0..feat_cols {
                    out.push_str(&format!(",{}", crate::trainer::fmt_f64(feats.get(i, j))));
                }
                if let Some(targets) = &self.targets {
                    for j in 0..target_cols {
                        out.push_str(&format!(
                            ",{}",
                            crate::trainer::fmt_f64(targets[t].get(i, j))
                        ));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Dataset, ProblemError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ProblemError::DatasetCsv {
            line: 0,
            reason: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "task" || cols[1] != "index" {
            return Err(ProblemError::DatasetCsv {
                line: 1,
                reason: "header must start with task,index".into(),
            });
        }
        let feat_cols = cols.iter().filter(|c| c.starts_with("x_")).count();
        let target_cols = cols.iter().filter(|c| c.starts_with("y_")).count();

        let mut rows: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = Vec::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let parse = |s: &str| -> Result<f64, ProblemError> {
                s.parse().map_err(|_| ProblemError::DatasetCsv {
                    line: lineno + 1,
                    reason: format!("bad float {s:?}"),
                })
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + feat_cols + target_cols {
                return Err(ProblemError::DatasetCsv {
                    line: lineno + 1,
                    reason: format!(
                        "expected {} fields, got {}",
                        2 + feat_cols + target_cols,
                        fields.len()
                    ),
                });
            }
            let task: usize = fields[0].parse().map_err(|_| ProblemError::DatasetCsv {
                line: lineno + 1,
                reason: "bad task id".into(),
            })?;
            let index: usize = fields[1].parse().map_err(|_| ProblemError::DatasetCsv {
                line: lineno + 1,
                reason: "bad index".into(),
            })?;
            let feats = fields[2..2 + feat_cols]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<f64>, _>>()?;
            let targets = fields[2 + feat_cols..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push((task, index, feats, targets));
        }
        let tasks = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut features = Vec::with_capacity(tasks);
        let mut target_rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tasks);
        for t in 0..tasks {
            let mut task_rows: Vec<&(usize, usize, Vec<f64>, Vec<f64>)> =
                rows.iter().filter(|r| r.0 == t).collect();
            task_rows.sort_by_key(|r| r.1);
            for (want, row) in task_rows.iter().enumerate() {
                if row.1 != want {
                    return Err(ProblemError::DatasetCsv {
                        line: 0,
                        reason: format!("task {t} indices not contiguous at {want}"),
                    });
                }
            }
            features.push(Matrix::from_rows(
                &task_rows.iter().map(|r| r.2.clone()).collect::<Vec<_>>(),
            ));
            target_rows.push(task_rows.iter().map(|r| r.3.clone()).collect());
        }
        let targets = if target_cols > 0 {
            Some(target_rows.iter().map(|t| Matrix::from_rows(t)).collect())
        } else {
            None
        };
        Ok(Dataset { features, targets })
    }
}
