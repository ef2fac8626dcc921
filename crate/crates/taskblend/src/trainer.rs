//! The doubly stochastic training loop: per iteration, sample a mini-batch
//! per task from the data stream, compute losses and exact gradients,
//! obtain weights and the aggregated gradient from the strategy (weights
//! stream), then update the shared parameters with the aggregate and each
//! task head with its own unweighted task gradient.
//!
//! Every run derives its randomness from one master seed through fixed
//! stream ids, so an equal-weighting run and a random-weighting run with
//! the same seed see byte-identical data batches.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{norm, norm_sq};
use crate::problems::{sample_batch, Batch, MultiTaskProblem, Params};
use crate::rng::{RngStream, STREAM_DATA, STREAM_INIT, STREAM_WEIGHTS};
use crate::sampling::WeightDistribution;
use crate::strategies::{
    AggregationContext, StrategyEngine, StrategyError, StrategyKind, StrategyParams,
};

/// Losses above this (or non-finite) abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("run diverged at iteration {iteration}: task {task} loss {loss:e}")]
    Diverged {
        iteration: u64,
        task: usize,
        loss: f64,
    },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("invalid training config: {0}")]
    Config(String),
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    /// Fixed-step SGD, η_k = eta.
    SgdFixed { eta: f64 },
    /// Decreasing-step SGD, η_k = alpha_step / k.
    SgdDecreasing { alpha_step: f64 },
    /// Adam with base rate eta.
    Adam {
        eta: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match self {
            OptimizerSpec::SgdFixed { eta } => *eta > 0.0,
            OptimizerSpec::SgdDecreasing { alpha_step } => *alpha_step > 0.0,
            OptimizerSpec::Adam {
                eta,
                beta1,
                beta2,
                epsilon,
            } => {
                *eta > 0.0
                    && (0.0..1.0).contains(beta1)
                    && (0.0..1.0).contains(beta2)
                    && *epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(
                "optimizer rates must be positive".into(),
            ))
        }
    }
}

/// η_k for iteration k ≥ 1.
pub fn lr_schedule(spec: &OptimizerSpec, k: u64) -> f64 {
    match spec {
        OptimizerSpec::SgdFixed { eta } => *eta,
        OptimizerSpec::SgdDecreasing { alpha_step } => {
            assert!(k >= 1, "decreasing schedule starts at k = 1");
            alpha_step / k as f64
        }
        OptimizerSpec::Adam { eta, .. } => *eta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub log_stride: u64,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub strategy_params: StrategyParams,
    pub distribution: Option<WeightDistribution>,
    pub optimizer: OptimizerSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.log_stride == 0 {
            return Err(TrainError::Config("log_stride must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: u64,
    /// Batch losses used at this iteration.
    pub losses: Vec<f64>,
    /// Effective weights; NaN-filled when the strategy reports none.
    pub weights: Vec<f64>,
    /// Norm of the aggregated shared gradient.
    pub grad_norm: f64,
    /// ‖θ_k − θ*‖² after the update, when the optimum is known.
    pub dist_sq: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub tasks: usize,
    pub initial_full_losses: Vec<f64>,
    pub initial_dist_sq: Option<f64>,
    pub rows: Vec<IterationRow>,
    pub final_full_losses: Vec<f64>,
    pub final_dist_sq: Option<f64>,
    pub final_params: Params,
    pub wall_secs: f64,
    /// Summed strategy diagnostics over the run (fallback counts, gaps).
    pub diagnostics: BTreeMap<String, f64>,
}

/// 17 significant digits: enough for an exact f64 round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl RunRecord {
    /// CSV schema: `iter,loss_1..loss_T,weight_1..weight_T,grad_norm,dist_sq_opt`,
    /// one row per logged iteration, floats at 17 significant digits, empty
    /// field when no optimum is known. No timestamps, so identical runs
    /// produce identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter");
        for t in 1..=self.tasks {
            out.push_str(&format!(",loss_{t}"));
        }
        for t in 1..=self.tasks {
            out.push_str(&format!(",weight_{t}"));
        }
        out.push_str(",grad_norm,dist_sq_opt\n");
        for row in &self.rows {
            out.push_str(&row.iter.to_string());
            for l in &row.losses {
                out.push_str(&format!(",{}", fmt_f64(*l)));
            }
            for w in &row.weights {
                out.push_str(&format!(",{}", fmt_f64(*w)));
            }
            out.push_str(&format!(",{}", fmt_f64(row.grad_norm)));
            match row.dist_sq {
                Some(d) => out.push_str(&format!(",{}\n", fmt_f64(d))),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn mean_final_loss(&self) -> f64 {
        self.final_full_losses.iter().sum::<f64>() / self.final_full_losses.len() as f64
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

impl AdamState {
    fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1,
            beta2,
            epsilon,
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], eta: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= eta * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

enum Updater {
    Sgd,
    Adam {
        shared: AdamState,
        tasks: Vec<AdamState>,
    },
}

impl Updater {
    fn new(spec: &OptimizerSpec, problem: &dyn MultiTaskProblem) -> Self {
        match spec {
            OptimizerSpec::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => Updater::Adam {
                shared: AdamState::new(problem.shared_dim(), *beta1, *beta2, *epsilon),
                tasks: (0..problem.tasks())
                    .map(|t| AdamState::new(problem.task_dim(t), *beta1, *beta2, *epsilon))
                    .collect(),
            },
            _ => Updater::Sgd,
        }
    }

    fn apply(
        &mut self,
        params: &mut Params,
        shared_grad: &[f64],
        task_grads: &[Vec<f64>],
        eta: f64,
    ) {
        match self {
            Updater::Sgd => {
                for (p, g) in params.shared.iter_mut().zip(shared_grad) {
                    *p -= eta * g;
                }
                for (task, grad) in params.task.iter_mut().zip(task_grads) {
                    for (p, g) in task.iter_mut().zip(grad) {
                        *p -= eta * g;
                    }
                }
            }
            Updater::Adam { shared, tasks } => {
                shared.apply(&mut params.shared, shared_grad, eta);
                for ((task, grad), state) in params.task.iter_mut().zip(task_grads).zip(tasks) {
                    state.apply(task, grad, eta);
                }
            }
        }
    }
}

fn dist_to(params: &Params, optimum: &Option<Vec<f64>>) -> Option<f64> {
    optimum.as_ref().map(|opt| {
        params
            .shared
            .iter()
            .zip(opt)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// Runs the full training loop. Deterministic given (problem, config):
/// stream 0 feeds batch sampling, stream 1 the strategy, stream 3 the
/// parameter init. Distance-to-optimum is measured against the
/// uniform-weight empirical optimum where the family has one.
pub fn train(
    problem: &dyn MultiTaskProblem,
    config: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let tasks = problem.tasks();
    let n = problem.samples_per_task();

    let mut data_rng = RngStream::new(config.seed, STREAM_DATA);
    let mut weights_rng = RngStream::new(config.seed, STREAM_WEIGHTS);
    let mut init_rng = RngStream::new(config.seed, STREAM_INIT);

    let mut params = problem.init_params(&mut init_rng);
    let mut engine = StrategyEngine::new(
        config.strategy,
        config.distribution,
        &config.strategy_params,
        tasks,
        &mut weights_rng,
    )?;

    let optimum = problem.optimum(&vec![1.0 / tasks as f64; tasks]);
    let initial_full_losses = problem.full_losses(&params);
    let initial_dist_sq = dist_to(&params, &optimum);
    let mut updater = Updater::new(&config.optimizer, problem);

    let mut rows = Vec::new();
    let mut diagnostics: BTreeMap<String, f64> = BTreeMap::new();
    for k in 1..=config.iterations {
        let batch = sample_batch(n, tasks, config.batch_size, &mut data_rng);
        let eval = problem.evaluate_batch(&params, &batch);
        for (t, &loss) in eval.losses.iter().enumerate() {
            if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
                return Err(TrainError::Diverged {
                    iteration: k,
                    task: t,
                    loss,
                });
            }
        }

        let sign: Vec<f64> = params
            .shared
            .iter()
            .map(|&p| if p < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let ctx = AggregationContext {
            losses: &eval.losses,
            grads: &eval.shared_grads,
            shared_param_sign: &sign,
            iteration: k - 1,
        };
        let result = engine.step(&ctx, &mut weights_rng)?;
        for (key, value) in &result.diagnostics {
            *diagnostics.entry(key.clone()).or_insert(0.0) += value;
        }

        let eta = lr_schedule(&config.optimizer, k);
        updater.apply(&mut params, &result.shared_gradient, &eval.task_grads, eta);

        if k % config.log_stride == 0 {
            let weights = result
                .effective_weights
                .unwrap_or_else(|| vec![f64::NAN; tasks]);
            rows.push(IterationRow {
                iter: k,
                losses: eval.losses,
                weights,
                grad_norm: norm(&result.shared_gradient),
                dist_sq: dist_to(&params, &optimum),
            });
        }
    }

    let final_full_losses = problem.full_losses(&params);
    let final_dist_sq = dist_to(&params, &optimum);
    Ok(RunRecord {
        tasks,
        initial_full_losses,
        initial_dist_sq,
        rows,
        final_full_losses,
        final_dist_sq,
        final_params: params,
        wall_secs: started.elapsed().as_secs_f64(),
        diagnostics,
    })
}

/// The update noise ξ = ∇(λᵀℓ(batch;θ)) − ∇(μᵀℓ(full;θ)) at a fixed θ,
/// with μ uniform. `distribution = None` is the fixed-weight baseline
/// (λ ≡ μ), whose noise is batch-only; a distribution adds weight-sampling
/// noise on top of the same batches. `batch_size ≥ n` is the full-batch
/// regime (every point once), where the fixed-weight noise vanishes
/// exactly. Returns `n_samples` squared norms.
pub fn noise_sample(
    problem: &dyn MultiTaskProblem,
    distribution: Option<WeightDistribution>,
    params: &Params,
    batch_size: usize,
    n_samples: usize,
    seed: u64,
) -> Vec<f64> {
    let tasks = problem.tasks();
    let n = problem.samples_per_task();
    let mut data_rng = RngStream::new(seed, STREAM_DATA);
    let mut weights_rng = RngStream::new(seed, STREAM_WEIGHTS);
    let uniform = vec![1.0 / tasks as f64; tasks];

    let full_eval = problem.evaluate_batch(params, &Batch::full(n, tasks));
    let full_grad = full_eval.shared_grads.weighted_row_sum(&uniform);

    (0..n_samples)
        .map(|_| {
            let batch = if batch_size >= n {
                Batch::full(n, tasks)
            } else {
                sample_batch(n, tasks, batch_size, &mut data_rng)
            };
            let eval = problem.evaluate_batch(params, &batch);
            let weights = match distribution {
                Some(dist) => crate::sampling::sample_weights(dist, tasks, &mut weights_rng)
                    .expect("weight sampling cannot fail for the built-in distributions")
                    .into_vec(),
                None => uniform.clone(),
            };
            let stochastic = eval.shared_grads.weighted_row_sum(&weights);
            norm_sq(
                &stochastic
                    .iter()
                    .zip(&full_grad)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            )
        })
        .collect()
}

/// Per-coordinate running mean and variance of the doubly stochastic
/// aggregated gradient at a fixed θ, for unbiasedness checks against the
/// full uniform-weighted gradient. Returns (mean, variance, full_gradient).
pub fn stochastic_gradient_moments(
    problem: &dyn MultiTaskProblem,
    distribution: WeightDistribution,
    params: &Params,
    batch_size: usize,
    n_samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let tasks = problem.tasks();
    let n = problem.samples_per_task();
    let d = problem.shared_dim();
    let mut data_rng = RngStream::new(seed, STREAM_DATA);
    let mut weights_rng = RngStream::new(seed, STREAM_WEIGHTS);
    let uniform = vec![1.0 / tasks as f64; tasks];
    let full_eval = problem.evaluate_batch(params, &Batch::full(n, tasks));
    let full_grad = full_eval.shared_grads.weighted_row_sum(&uniform);

    // Welford accumulation.
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for i in 0..n_samples {
        let batch = sample_batch(n, tasks, batch_size, &mut data_rng);
        let eval = problem.evaluate_batch(params, &batch);
        let weights = crate::sampling::sample_weights(distribution, tasks, &mut weights_rng)
            .expect("weight sampling cannot fail for the built-in distributions")
            .into_vec();
        let g = eval.shared_grads.weighted_row_sum(&weights);
        let count = (i + 1) as f64;
        for j in 0..d {
            let delta = g[j] - mean[j];
            mean[j] += delta / count;
            m2[j] += delta * (g[j] - mean[j]);
        }
    }
    let var: Vec<f64> = m2.iter().map(|x| x / (n_samples as f64 - 1.0)).collect();
    (mean, var, full_grad)
}
