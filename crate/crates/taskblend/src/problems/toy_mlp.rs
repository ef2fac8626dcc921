//! A small hard-parameter-sharing regression model: one shared tanh trunk
//! plus a linear head per task, with hand-derived backpropagation. Targets
//! come from a hidden teacher network of the same shape plus label noise,
//! so a good shared representation exists by construction.

use serde::{Deserialize, Serialize};

use crate::math::Matrix;
use crate::rng::RngStream;

use super::{Batch, Dataset, Evaluation, MultiTaskProblem, Params, ProblemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyMlpSpec {
    pub tasks: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Outputs per task head.
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    pub n_per_task: usize,
    /// Std of the Gaussian noise added to teacher targets.
    pub label_noise: f64,
}

fn default_out_dim() -> usize {
    1
}

impl ToyMlpSpec {
    fn validate(&self) -> Result<(), ProblemError> {
        if self.tasks == 0
            || self.input_dim == 0
            || self.hidden_dim == 0
            || self.out_dim == 0
            || self.n_per_task == 0
        {
            return Err(ProblemError::Construction(
                "tasks, input_dim, hidden_dim, out_dim, n_per_task must be positive".into(),
            ));
        }
        if self.label_noise < 0.0 {
            return Err(ProblemError::Construction(
                "label_noise must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn shared_len(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim
    }

    fn head_len(&self) -> usize {
        self.out_dim * self.hidden_dim + self.out_dim
    }
}

#[derive(Debug, Clone)]
pub struct ToyMlpProblem {
    spec: ToyMlpSpec,
    /// Per-task inputs, n × input_dim.
    inputs: Vec<Matrix>,
    /// Per-task targets, n × out_dim.
    targets: Vec<Matrix>,
}

/// Shared-parameter layout: trunk weights W1 (hidden × input, row-major)
/// followed by the hidden biases. Head layout per task: W2 (out × hidden,
/// row-major) followed by the output biases.
struct TrunkView<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
}

struct HeadView<'a> {
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split_shared<'a>(spec: &ToyMlpSpec, shared: &'a [f64]) -> TrunkView<'a> {
    let w_len = spec.hidden_dim * spec.input_dim;
    TrunkView {
        w1: &shared[..w_len],
        b1: &shared[w_len..],
    }
}

fn split_head<'a>(spec: &ToyMlpSpec, head: &'a [f64]) -> HeadView<'a> {
    let w_len = spec.out_dim * spec.hidden_dim;
    HeadView {
        w2: &head[..w_len],
        b2: &head[w_len..],
    }
}

fn forward(
    spec: &ToyMlpSpec,
    trunk: &TrunkView,
    head: &HeadView,
    x: &[f64],
    hidden: &mut [f64],
    out: &mut [f64],
) {
    for (k, h) in hidden.iter_mut().enumerate() {
        let mut z = trunk.b1[k];
        let row = &trunk.w1[k * spec.input_dim..(k + 1) * spec.input_dim];
        for (w, xv) in row.iter().zip(x) {
            z += w * xv;
        }
        *h = z.tanh();
    }
    for (m, o) in out.iter_mut().enumerate() {
        let mut y = head.b2[m];
        let row = &head.w2[m * spec.hidden_dim..(m + 1) * spec.hidden_dim];
        for (w, a) in row.iter().zip(hidden.iter()) {
            y += w * a;
        }
        *o = y;
    }
}

impl ToyMlpProblem {
    /// Generates teacher parameters, inputs, and noisy targets from the
    /// dataset stream. Draw order: teacher trunk, teacher heads (task
    /// order), then per task its inputs followed by its target noise.
    pub fn generate(spec: ToyMlpSpec, rng: &mut RngStream) -> Result<Self, ProblemError> {
        spec.validate()?;
        let w1_scale = 1.0 / (spec.input_dim as f64).sqrt();
        let w2_scale = 1.0 / (spec.hidden_dim as f64).sqrt();

        let mut teacher_shared = vec![0.0; spec.shared_len()];
        for (i, v) in teacher_shared.iter_mut().enumerate() {
            *v = if i < spec.hidden_dim * spec.input_dim {
                rng.normal() * w1_scale
            } else {
                rng.normal() * 0.1
            };
        }
        let teacher_heads: Vec<Vec<f64>> = (0..spec.tasks)
            .map(|_| {
                (0..spec.head_len())
                    .map(|i| {
                        if i < spec.out_dim * spec.hidden_dim {
                            rng.normal() * w2_scale
                        } else {
                            rng.normal() * 0.1
                        }
                    })
                    .collect()
            })
            .collect();

        let trunk = split_shared(&spec, &teacher_shared);
        let mut inputs = Vec::with_capacity(spec.tasks);
        let mut targets = Vec::with_capacity(spec.tasks);
        let mut hidden = vec![0.0; spec.hidden_dim];
        let mut out = vec![0.0; spec.out_dim];
        for teacher_head in &teacher_heads {
            let head = split_head(&spec, teacher_head);
            let xs: Vec<Vec<f64>> = (0..spec.n_per_task)
                .map(|_| (0..spec.input_dim).map(|_| rng.normal()).collect())
                .collect();
            let ys: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| {
                    forward(&spec, &trunk, &head, x, &mut hidden, &mut out);
                    out.iter()
                        .map(|y| y + spec.label_noise * rng.normal())
                        .collect()
                })
                .collect();
            inputs.push(Matrix::from_rows(&xs));
            targets.push(Matrix::from_rows(&ys));
        }
        Ok(ToyMlpProblem {
            spec,
            inputs,
            targets,
        })
    }

    /// Rebuilds the problem from a dumped dataset.
    pub fn with_dataset(spec: ToyMlpSpec, dataset: Dataset) -> Result<Self, ProblemError> {
        spec.validate()?;
        let targets = dataset.targets.ok_or_else(|| {
            ProblemError::DatasetShape("toy_mlp dataset needs target columns".into())
        })?;
        if dataset.features.len() != spec.tasks || targets.len() != spec.tasks {
            return Err(ProblemError::DatasetShape("task count mismatch".into()));
        }
        for (f, y) in dataset.features.iter().zip(&targets) {
            if f.rows() != spec.n_per_task
                || f.cols() != spec.input_dim
                || y.rows() != spec.n_per_task
                || y.cols() != spec.out_dim
            {
                return Err(ProblemError::DatasetShape(
                    "feature/target dimensions do not match the problem parameters".into(),
                ));
            }
        }
        Ok(ToyMlpProblem {
            spec,
            inputs: dataset.features,
            targets,
        })
    }

    pub fn spec(&self) -> &ToyMlpSpec {
        &self.spec
    }
}

impl MultiTaskProblem for ToyMlpProblem {
    fn tasks(&self) -> usize {
        self.spec.tasks
    }

    fn shared_dim(&self) -> usize {
        self.spec.shared_len()
    }

    fn task_dim(&self, _task: usize) -> usize {
        self.spec.head_len()
    }

    fn samples_per_task(&self) -> usize {
        self.spec.n_per_task
    }

    fn init_params(&self, rng: &mut RngStream) -> Params {
        let w1_scale = 1.0 / (self.spec.input_dim as f64).sqrt();
        let w2_scale = 1.0 / (self.spec.hidden_dim as f64).sqrt();
        let mut shared = vec![0.0; self.spec.shared_len()];
        for (i, v) in shared.iter_mut().enumerate() {
            if i < self.spec.hidden_dim * self.spec.input_dim {
                *v = rng.normal() * w1_scale;
            }
        }
        let task = (0..self.spec.tasks)
            .map(|_| {
                let mut head = vec![0.0; self.spec.head_len()];
                for (i, v) in head.iter_mut().enumerate() {
                    if i < self.spec.out_dim * self.spec.hidden_dim {
                        *v = rng.normal() * w2_scale;
                    }
                }
                head
            })
            .collect();
        Params { shared, task }
    }

    fn evaluate_batch(&self, params: &Params, batch: &Batch) -> Evaluation {
        let spec = &self.spec;
        let trunk = split_shared(spec, &params.shared);
        let mut losses = Vec::with_capacity(spec.tasks);
        let mut shared_grads = Matrix::zeros(spec.tasks, spec.shared_len());
        let mut task_grads = Vec::with_capacity(spec.tasks);

        let mut hidden = vec![0.0; spec.hidden_dim];
        let mut out = vec![0.0; spec.out_dim];
        for t in 0..spec.tasks {
            let head = split_head(spec, &params.task[t]);
            let idx = &batch.indices[t];
            let inv_b = 1.0 / idx.len() as f64;
            let mut loss = 0.0;
            let mut head_grad = vec![0.0; spec.head_len()];
            let w1_len = spec.hidden_dim * spec.input_dim;
            let w2_len = spec.out_dim * spec.hidden_dim;
            for &i in idx {
                let x = self.inputs[t].row(i);
                let y = self.targets[t].row(i);
                forward(spec, &trunk, &head, x, &mut hidden, &mut out);

                // dL/dŷ = (ŷ − y)/B for the ½-squared-error mean.
                for m in 0..spec.out_dim {
                    let err = out[m] - y[m];
                    loss += 0.5 * err * err * inv_b;
                    let scaled = err * inv_b;
                    for k in 0..spec.hidden_dim {
                        head_grad[m * spec.hidden_dim + k] += scaled * hidden[k];
                    }
                    head_grad[w2_len + m] += scaled;
                }
                // δ_k = (W2ᵀ e)_k · (1 − a_k²), backed into the trunk.
                let grad_row = shared_grads.row_mut(t);
                for k in 0..spec.hidden_dim {
                    let mut back = 0.0;
                    for m in 0..spec.out_dim {
                        back += head.w2[m * spec.hidden_dim + k] * (out[m] - y[m]);
                    }
                    let delta = back * (1.0 - hidden[k] * hidden[k]) * inv_b;
                    for (j, &xv) in x.iter().enumerate() {
                        grad_row[k * spec.input_dim + j] += delta * xv;
                    }
                    grad_row[w1_len + k] += delta;
                }
            }
            losses.push(loss);
            task_grads.push(head_grad);
        }
        Evaluation {
            losses,
            shared_grads,
            task_grads,
        }
    }

    fn optimum(&self, _weights: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn dataset(&self) -> Dataset {
        Dataset {
            features: self.inputs.clone(),
            targets: Some(self.targets.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::sample_batch;
    use crate::rng::{RngStream, STREAM_DATA, STREAM_DATASET, STREAM_INIT};

    fn problem() -> ToyMlpProblem {
        let spec = ToyMlpSpec {
            tasks: 3,
            input_dim: 4,
            hidden_dim: 6,
            out_dim: 2,
            n_per_task: 32,
            label_noise: 0.1,
        };
        let mut rng = RngStream::new(5, STREAM_DATASET);
        ToyMlpProblem::generate(spec, &mut rng).unwrap()
    }

    /// Central finite differences on the batch loss, one parameter block at
    /// a time. The independent oracle for the hand-derived backprop.
    fn fd_check(problem: &ToyMlpProblem, params: &Params, batch: &Batch) {
        let step = 1e-5;
        let eval = problem.evaluate_batch(params, batch);
        let loss_at = |p: &Params| problem.evaluate_batch(p, batch).losses.clone();

        for t in 0..problem.tasks() {
            for j in 0..problem.shared_dim() {
                let mut plus = params.clone();
                plus.shared[j] += step;
                let mut minus = params.clone();
                minus.shared[j] -= step;
                let fd = (loss_at(&plus)[t] - loss_at(&minus)[t]) / (2.0 * step);
                let analytic = eval.shared_grads.get(t, j);
                let denom = analytic.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-4,
                    "shared grad mismatch task {t} coord {j}: {analytic} vs {fd}"
                );
            }
            for j in 0..problem.task_dim(t) {
                let mut plus = params.clone();
                plus.task[t][j] += step;
                let mut minus = params.clone();
                minus.task[t][j] -= step;
                let fd = (loss_at(&plus)[t] - loss_at(&minus)[t]) / (2.0 * step);
                let analytic = eval.task_grads[t][j];
                let denom = analytic.abs().max(1.0);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-4,
                    "head grad mismatch task {t} coord {j}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = problem();
        let mut init_rng = RngStream::new(7, STREAM_INIT);
        let mut data_rng = RngStream::new(7, STREAM_DATA);
        for _ in 0..3 {
            let params = p.init_params(&mut init_rng);
            let batch = sample_batch(p.samples_per_task(), p.tasks(), 8, &mut data_rng);
            fd_check(&p, &params, &batch);
        }
    }

    #[test]
    fn forward_pass_is_deterministic() {
        let p = problem();
        let mut init_rng = RngStream::new(9, STREAM_INIT);
        let params = p.init_params(&mut init_rng);
        let batch = Batch::full(p.samples_per_task(), p.tasks());
        let a = p.evaluate_batch(&params, &batch);
        let b = p.evaluate_batch(&params, &batch);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn zero_label_noise_teacher_is_learnable_to_low_loss() {
        // Sanity: plain equal-weight SGD on the teacher's own data reaches a
        // small loss, confirming gradients point the right way.
        let spec = ToyMlpSpec {
            tasks: 2,
            input_dim: 3,
            hidden_dim: 5,
            out_dim: 1,
            n_per_task: 64,
            label_noise: 0.0,
        };
        let mut rng = RngStream::new(21, STREAM_DATASET);
        let p = ToyMlpProblem::generate(spec, &mut rng).unwrap();
        let mut init_rng = RngStream::new(21, STREAM_INIT);
        let mut params = p.init_params(&mut init_rng);
        let full = Batch::full(p.samples_per_task(), p.tasks());
        let before: f64 = p.full_losses(&params).iter().sum();
        for _ in 0..3000 {
            let eval = p.evaluate_batch(&params, &full);
            for t in 0..2 {
                for (w, g) in params.task[t].iter_mut().zip(&eval.task_grads[t]) {
                    *w -= 0.5 * g;
                }
            }
            for j in 0..p.shared_dim() {
                let g: f64 = (0..2).map(|t| 0.5 * eval.shared_grads.get(t, j)).sum();
                params.shared[j] -= 0.5 * g;
            }
        }
        let after: f64 = p.full_losses(&params).iter().sum();
        assert!(
            after < before * 0.05,
            "loss barely moved: {before} -> {after}"
        );
    }

    #[test]
    fn dataset_round_trip_rebuilds_the_problem() {
        let p = problem();
        let ds = p.dataset();
        let rebuilt = ToyMlpProblem::with_dataset(p.spec().clone(), ds).unwrap();
        let mut init_rng = RngStream::new(3, STREAM_INIT);
        let params = p.init_params(&mut init_rng);
        assert_eq!(p.full_losses(&params), rebuilt.full_losses(&params));
    }
}
