//! Strongly convex quadratic task family: task t draws n points around a
//! center a_t and charges (c_t/2)·mean_i‖θ − x_i‖². The empirical optimum
//! of any weight mix is the curvature-weighted mean of the per-task sample
//! means, so distance-to-optimum is exact for the sampled dataset.

use serde::{Deserialize, Serialize};

use crate::math::Matrix;
use crate::rng::RngStream;

use super::{Batch, Dataset, Evaluation, MultiTaskProblem, Params, ProblemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub tasks: usize,
    pub dim: usize,
    /// Strong-convexity moduli c_t, one per task.
    pub curvatures: Vec<f64>,
    /// Population task centers a_t; rows of length `dim`.
    pub centers: Vec<Vec<f64>>,
    /// Std of the isotropic Gaussian sample noise around each center.
    pub data_noise: f64,
    pub n_per_task: usize,
    /// θ₀; defaults to the origin. Fixed (not seed-dependent) so
    /// convergence bounds share one starting error across seeds.
    #[serde(default)]
    pub init_theta: Option<Vec<f64>>,
}

impl QuadraticSpec {
    fn validate(&self) -> Result<(), ProblemError> {
        if self.tasks == 0 || self.dim == 0 || self.n_per_task == 0 {
            return Err(ProblemError::Construction(
                "tasks, dim, n_per_task must be positive".into(),
            ));
        }
        if self.curvatures.len() != self.tasks {
            return Err(ProblemError::Construction(format!(
                "need {} curvatures, got {}",
                self.tasks,
                self.curvatures.len()
            )));
        }
        if self.curvatures.iter().any(|&c| c <= 0.0) {
            return Err(ProblemError::Construction(
                "curvatures must be positive".into(),
            ));
        }
        if self.centers.len() != self.tasks || self.centers.iter().any(|c| c.len() != self.dim) {
            return Err(ProblemError::Construction(
                "centers must be tasks × dim".into(),
            ));
        }
        if self.data_noise < 0.0 {
            return Err(ProblemError::Construction("data_noise must be >= 0".into()));
        }
        if let Some(init) = &self.init_theta {
            if init.len() != self.dim {
                return Err(ProblemError::Construction(
                    "init_theta must have length dim".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticTaskFamily {
    spec: QuadraticSpec,
    /// Per-task n × dim samples.
    data: Vec<Matrix>,
    /// Empirical sample means ā_t.
    empirical_means: Vec<Vec<f64>>,
}

impl QuadraticTaskFamily {
    /// Generates the datasets x_i ~ N(a_t, σ²·I) from the dataset stream.
    pub fn generate(spec: QuadraticSpec, rng: &mut RngStream) -> Result<Self, ProblemError> {
        spec.validate()?;
        let data: Vec<Matrix> = (0..spec.tasks)
            .map(|t| {
                let rows: Vec<Vec<f64>> = (0..spec.n_per_task)
                    .map(|_| {
                        (0..spec.dim)
                            .map(|j| spec.centers[t][j] + spec.data_noise * rng.normal())
                            .collect()
                    })
                    .collect();
                Matrix::from_rows(&rows)
            })
            .collect();
        Ok(Self::from_parts(spec, data))
    }

    /// Rebuilds the family from a dumped dataset.
    pub fn with_dataset(spec: QuadraticSpec, dataset: Dataset) -> Result<Self, ProblemError> {
        spec.validate()?;
        if dataset.features.len() != spec.tasks {
            return Err(ProblemError::DatasetShape(format!(
                "expected {} tasks, dataset has {}",
                spec.tasks,
                dataset.features.len()
            )));
        }
        for f in &dataset.features {
            if f.rows() != spec.n_per_task || f.cols() != spec.dim {
                return Err(ProblemError::DatasetShape(format!(
                    "expected {}×{} features per task, got {}×{}",
                    spec.n_per_task,
                    spec.dim,
                    f.rows(),
                    f.cols()
                )));
            }
        }
        Ok(Self::from_parts(spec, dataset.features))
    }

    fn from_parts(spec: QuadraticSpec, data: Vec<Matrix>) -> Self {
        let empirical_means = data
            .iter()
            .map(|m| {
                (0..m.cols())
                    .map(|j| (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / m.rows() as f64)
                    .collect()
            })
            .collect();
        QuadraticTaskFamily {
            spec,
            data,
            empirical_means,
        }
    }

    pub fn spec(&self) -> &QuadraticSpec {
        &self.spec
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.spec.curvatures
    }

    pub fn min_curvature(&self) -> f64 {
        self.spec
            .curvatures
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn empirical_means(&self) -> &[Vec<f64>] {
        &self.empirical_means
    }

    /// Per-task gradient-smoothness constants. Each task's Hessian is
    /// exactly c_t·I, so the smoothness and strong-convexity constants
    /// coincide with the curvature.
    pub fn gradient_lipschitz(&self) -> &[f64] {
        &self.spec.curvatures
    }
}

/// θ* = (Σ_t μ_t c_t ā_t)/(Σ_t μ_t c_t): the exact minimizer of the
/// μ-weighted empirical loss.
pub fn quadratic_optimum(family: &QuadraticTaskFamily, weights: &[f64]) -> Vec<f64> {
    assert_eq!(weights.len(), family.spec.tasks);
    let dim = family.spec.dim;
    let mut numer = vec![0.0; dim];
    let mut denom = 0.0;
    for (t, mean) in family.empirical_means.iter().enumerate() {
        let wc = weights[t] * family.spec.curvatures[t];
        denom += wc;
        for (out, &m) in numer.iter_mut().zip(mean) {
            *out += wc * m;
        }
    }
    numer.into_iter().map(|x| x / denom).collect()
}

impl MultiTaskProblem for QuadraticTaskFamily {
    fn tasks(&self) -> usize {
        self.spec.tasks
    }

    fn shared_dim(&self) -> usize {
        self.spec.dim
    }

    fn task_dim(&self, _task: usize) -> usize {
        0
    }

    fn samples_per_task(&self) -> usize {
        self.spec.n_per_task
    }

    fn init_params(&self, _rng: &mut RngStream) -> Params {
        let shared = self
            .spec
            .init_theta
            .clone()
            .unwrap_or_else(|| vec![0.0; self.spec.dim]);
        Params {
            shared,
            task: vec![Vec::new(); self.spec.tasks],
        }
    }

    fn evaluate_batch(&self, params: &Params, batch: &Batch) -> Evaluation {
        let theta = &params.shared;
        let dim = self.spec.dim;
        let mut losses = Vec::with_capacity(self.spec.tasks);
        let mut grads = Matrix::zeros(self.spec.tasks, dim);
        for t in 0..self.spec.tasks {
            let idx = &batch.indices[t];
            let c = self.spec.curvatures[t];
            let mut mean_sq = 0.0;
            let mut mean = vec![0.0; dim];
            for &i in idx {
                let row = self.data[t].row(i);
                for j in 0..dim {
                    let diff = theta[j] - row[j];
                    mean_sq += diff * diff;
                    mean[j] += row[j];
                }
            }
            let b = idx.len() as f64;
            losses.push(0.5 * c * mean_sq / b);
            for j in 0..dim {
                grads.set(t, j, c * (theta[j] - mean[j] / b));
            }
        }
        Evaluation {
            losses,
            shared_grads: grads,
            task_grads: vec![Vec::new(); self.spec.tasks],
        }
    }

    fn optimum(&self, weights: &[f64]) -> Option<Vec<f64>> {
        Some(quadratic_optimum(self, weights))
    }

    fn dataset(&self) -> Dataset {
        Dataset {
            features: self.data.clone(),
            targets: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, STREAM_DATASET};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    fn tiny_family(
        centers: Vec<Vec<f64>>,
        curvatures: Vec<f64>,
        noise: f64,
    ) -> QuadraticTaskFamily {
        let spec = QuadraticSpec {
            tasks: centers.len(),
            dim: centers[0].len(),
            curvatures,
            centers,
            data_noise: noise,
            n_per_task: 64,
            init_theta: None,
        };
        let mut rng = RngStream::new(3, STREAM_DATASET);
        QuadraticTaskFamily::generate(spec, &mut rng).unwrap()
    }

    #[test]
    fn single_task_optimum_is_the_sample_mean() {
        let fam = tiny_family(vec![vec![2.0, -1.0]], vec![1.5], 0.3);
        let opt = quadratic_optimum(&fam, &[1.0]);
        assert_eq!(opt, fam.empirical_means()[0]);
    }

    #[test]
    fn equal_curvatures_give_the_midpoint() {
        let fam = tiny_family(vec![vec![0.0], vec![2.0]], vec![1.0, 1.0], 0.0);
        let opt = quadratic_optimum(&fam, &[0.5, 0.5]);
        assert_close(opt[0], 1.0, 1e-12);
    }

    #[test]
    fn weighted_mean_formula_matches_numerical_minimization() {
        // c = (1, 3), centers 0 and 4, equal weights: θ* = 3·4/4 = 3 at zero
        // data noise. Cross-check against plain gradient descent on the
        // full-data mixed loss.
        let fam = tiny_family(vec![vec![0.0], vec![4.0]], vec![1.0, 3.0], 0.0);
        let weights = [0.5, 0.5];
        let opt = quadratic_optimum(&fam, &weights);
        assert_close(opt[0], 3.0, 1e-12);

        let mut theta = vec![0.0];
        let full = Batch::full(fam.samples_per_task(), fam.tasks());
        for _ in 0..2000 {
            let eval = fam.evaluate_batch(
                &Params {
                    shared: theta.clone(),
                    task: vec![Vec::new(); 2],
                },
                &full,
            );
            let g: f64 = (0..2)
                .map(|t| weights[t] * eval.shared_grads.get(t, 0))
                .sum();
            theta[0] -= 0.2 * g;
        }
        assert_close(theta[0], opt[0], 1e-8);
    }

    #[test]
    fn optimum_is_a_true_minimizer_under_perturbation() {
        let fam = tiny_family(vec![vec![0.5, 1.0], vec![-1.0, 2.0]], vec![1.0, 2.0], 0.4);
        let weights = [0.3, 0.7];
        let opt = quadratic_optimum(&fam, &weights);
        let full = Batch::full(fam.samples_per_task(), fam.tasks());
        let mixed = |theta: &[f64]| -> f64 {
            let eval = fam.evaluate_batch(
                &Params {
                    shared: theta.to_vec(),
                    task: vec![Vec::new(); 2],
                },
                &full,
            );
            eval.losses.iter().zip(&weights).map(|(l, w)| l * w).sum()
        };
        let base = mixed(&opt);
        let mut rng = RngStream::new(11, STREAM_DATASET);
        for _ in 0..100 {
            let perturbed: Vec<f64> = opt.iter().map(|x| x + 0.1 * rng.normal()).collect();
            assert!(mixed(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn loss_and_gradient_at_a_sample_point() {
        // Single-sample batch at θ = x: loss 0, gradient 0.
        let fam = tiny_family(vec![vec![1.0, 2.0]], vec![2.0], 0.5);
        let x = fam.data[0].row(3).to_vec();
        let batch = Batch {
            indices: vec![vec![3]],
        };
        let eval = fam.evaluate_batch(
            &Params {
                shared: x,
                task: vec![Vec::new()],
            },
            &batch,
        );
        assert_close(eval.losses[0], 0.0, 1e-15);
        assert_close(eval.shared_grads.get(0, 0), 0.0, 1e-15);
        assert_close(eval.shared_grads.get(0, 1), 0.0, 1e-15);
    }

    #[test]
    fn gradient_is_curvature_times_residual() {
        // c = 1, θ = 0: gradient is −x̄ over the batch.
        let fam = tiny_family(vec![vec![0.0, 0.0]], vec![1.0], 1.0);
        let batch = Batch {
            indices: vec![vec![0, 1, 2, 3]],
        };
        let eval = fam.evaluate_batch(
            &Params {
                shared: vec![0.0, 0.0],
                task: vec![Vec::new()],
            },
            &batch,
        );
        for j in 0..2 {
            let mean: f64 = (0..4).map(|i| fam.data[0].get(i, j)).sum::<f64>() / 4.0;
            assert_close(eval.shared_grads.get(0, j), -mean, 1e-12);
        }
    }
}
