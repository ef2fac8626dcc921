//! A two-task scalar loss landscape whose mean has one sharp local minimum
//! and one flat global minimum, for minima-escape experiments.
//!
//! Closed form of the default instance, task t ∈ {0, 1}:
//!
//! ```text
//! ℓ_0(θ) = −A_s·exp(−(θ₁−m_s)²/(2w_s²)) + (q/2)(θ₁ − r_0)²  [+ (q₂/2)θ₂²]
//! ℓ_1(θ) = −A_f·exp(−(θ₁−m_f)²/(2w_f²)) + (q/2)(θ₁ − r_1)²  [+ (q₂/2)θ₂²]
//! ```
//!
//! with A_s = 0.4, w_s = 0.09, m_s = −1, A_f = 1, w_f = 0.6, m_f = +1,
//! q = 0.5, (r_0, r_1) = (−4, +4), q₂ = 0.5. The narrow well is sharp, the
//! wide well is flat and deeper on the mean loss, and the opposed
//! confinement targets r_t make the task gradients disagree everywhere, so
//! weight-sampling noise has something to act on. Mini-batch noise enters
//! through per-task datasets of N(0, σ_d²) vectors x_i whose batch mean
//! tilts the loss by x̄·θ, leaving the population landscape unchanged.

use serde::{Deserialize, Serialize};

use crate::math::Matrix;
use crate::rng::RngStream;

use super::{Batch, Dataset, Evaluation, MultiTaskProblem, Params, ProblemError};

pub const SHARP_DEPTH: f64 = 0.4;
pub const SHARP_WIDTH: f64 = 0.09;
pub const SHARP_CENTER: f64 = -1.0;
pub const FLAT_DEPTH: f64 = 1.0;
pub const FLAT_WIDTH: f64 = 0.6;
pub const FLAT_CENTER: f64 = 1.0;
pub const CONFINE: f64 = 0.5;
pub const TASK_TARGETS: [f64; 2] = [-4.0, 4.0];
pub const EXTRA_DIM_CURVATURE: f64 = 0.5;

/// Gradient norm required of a verified minimum.
const MINIMUM_GRAD_TOL: f64 = 1e-8;
/// Sharp-to-flat curvature ratio required of a valid instance.
const CURVATURE_RATIO_MIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSpec {
    /// 1 or 2.
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub n_per_task: usize,
    /// Std of the additive per-coordinate data noise.
    pub data_noise: f64,
    /// Initialization ball radius around the chosen minimum.
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
    /// Start in the flat basin instead of the sharp one.
    #[serde(default)]
    pub init_at_flat: bool,
}

fn default_dimension() -> usize {
    1
}

fn default_init_radius() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimumInfo {
    /// Position along the double-well axis.
    pub location: f64,
    /// Second derivative of the mean loss there.
    pub curvature: f64,
    /// Mean loss value there.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeMinima {
    pub sharp: MinimumInfo,
    pub flat: MinimumInfo,
    /// The mean-loss maximum separating the two basins.
    pub saddle: f64,
}

#[derive(Debug, Clone)]
pub struct LandscapeProblem {
    spec: LandscapeSpec,
    /// Per-task n × dimension additive noise samples.
    data: Vec<Matrix>,
    minima: LandscapeMinima,
}

fn well(x: f64, depth: f64, center: f64, width: f64) -> (f64, f64, f64) {
    let z = (x - center) / width;
    let e = (-0.5 * z * z).exp();
    let value = -depth * e;
    let grad = depth * (x - center) / (width * width) * e;
    let curv = depth * e / (width * width) * (1.0 - z * z);
    (value, grad, curv)
}

/// Task base loss along the well axis: (value, gradient, curvature).
fn base(task: usize, x: f64) -> (f64, f64, f64) {
    let (value, grad, curv) = if task == 0 {
        well(x, SHARP_DEPTH, SHARP_CENTER, SHARP_WIDTH)
    } else {
        well(x, FLAT_DEPTH, FLAT_CENTER, FLAT_WIDTH)
    };
    let r = TASK_TARGETS[task];
    (
        value + 0.5 * CONFINE * (x - r) * (x - r),
        grad + CONFINE * (x - r),
        curv + CONFINE,
    )
}

/// Mean loss over the two tasks: (value, gradient, curvature).
fn mean_loss(x: f64) -> (f64, f64, f64) {
    let a = base(0, x);
    let b = base(1, x);
    (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1), 0.5 * (a.2 + b.2))
}

fn newton_minimum(start: f64) -> f64 {
    let mut x = start;
    for _ in 0..200 {
        let (_, g, c) = mean_loss(x);
        if c <= 0.0 {
            break;
        }
        let step = g / c;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    x
}

/// Bisection on the mean-loss gradient between the minima: the gradient is
/// positive leaving the sharp basin and negative entering the flat one.
fn find_saddle(left: f64, right: f64) -> f64 {
    let mut lo = left + 1e-6;
    let mut hi = right - 1e-6;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_loss(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn locate_and_verify() -> Result<LandscapeMinima, ProblemError> {
    let sharp_loc = newton_minimum(SHARP_CENTER);
    let flat_loc = newton_minimum(FLAT_CENTER);
    let saddle = find_saddle(sharp_loc, flat_loc);
    let (sharp_loss, sharp_grad, sharp_curv) = mean_loss(sharp_loc);
    let (flat_loss, flat_grad, flat_curv) = mean_loss(flat_loc);

    if sharp_grad.abs() > MINIMUM_GRAD_TOL || flat_grad.abs() > MINIMUM_GRAD_TOL {
        return Err(ProblemError::Construction(format!(
            "minima not stationary: gradients {sharp_grad:e}, {flat_grad:e}"
        )));
    }
    if sharp_curv <= 0.0 || flat_curv <= 0.0 {
        return Err(ProblemError::Construction(
            "non-positive curvature at a minimum".into(),
        ));
    }
    if sharp_curv < CURVATURE_RATIO_MIN * flat_curv {
        return Err(ProblemError::Construction(format!(
            "curvature ratio {} below {CURVATURE_RATIO_MIN}",
            sharp_curv / flat_curv
        )));
    }
    if flat_loss >= sharp_loss {
        return Err(ProblemError::Construction(
            "flat minimum is not the global minimum".into(),
        ));
    }
    if !(sharp_loc < saddle && saddle < flat_loc) {
        return Err(ProblemError::Construction(
            "saddle not between the minima".into(),
        ));
    }
    Ok(LandscapeMinima {
        sharp: MinimumInfo {
            location: sharp_loc,
            curvature: sharp_curv,
            loss: sharp_loss,
        },
        flat: MinimumInfo {
            location: flat_loc,
            curvature: flat_curv,
            loss: flat_loss,
        },
        saddle,
    })
}

impl LandscapeProblem {
    pub fn generate(spec: LandscapeSpec, rng: &mut RngStream) -> Result<Self, ProblemError> {
        Self::validate(&spec)?;
        let data = (0..2)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..spec.n_per_task)
                    .map(|_| {
                        (0..spec.dimension)
                            .map(|_| spec.data_noise * rng.normal())
                            .collect()
                    })
                    .collect();
                Matrix::from_rows(&rows)
            })
            .collect();
        let minima = locate_and_verify()?;
        Ok(LandscapeProblem { spec, data, minima })
    }

    pub fn with_dataset(spec: LandscapeSpec, dataset: Dataset) -> Result<Self, ProblemError> {
        Self::validate(&spec)?;
        if dataset.features.len() != 2 {
            return Err(ProblemError::DatasetShape(
                "landscape has exactly 2 tasks".into(),
            ));
        }
        for f in &dataset.features {
            if f.rows() != spec.n_per_task || f.cols() != spec.dimension {
                return Err(ProblemError::DatasetShape(
                    "feature dimensions do not match the problem parameters".into(),
                ));
            }
        }
        let minima = locate_and_verify()?;
        Ok(LandscapeProblem {
            spec,
            data: dataset.features,
            minima,
        })
    }

    fn validate(spec: &LandscapeSpec) -> Result<(), ProblemError> {
        if !(spec.dimension == 1 || spec.dimension == 2) {
            return Err(ProblemError::Construction(
                "dimension must be 1 or 2".into(),
            ));
        }
        if spec.n_per_task == 0 {
            return Err(ProblemError::Construction(
                "n_per_task must be positive".into(),
            ));
        }
        if spec.data_noise < 0.0 || spec.init_radius < 0.0 {
            return Err(ProblemError::Construction(
                "data_noise and init_radius must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> &LandscapeSpec {
        &self.spec
    }

    /// Recorded minima, re-verified on every call.
    pub fn minima(&self) -> Result<LandscapeMinima, ProblemError> {
        locate_and_verify()
    }

    /// True when the point has crossed the saddle into the flat basin.
    pub fn in_flat_basin(&self, theta: &[f64]) -> bool {
        theta[0] > self.minima.saddle
    }

    pub fn sharp_location(&self) -> f64 {
        self.minima.sharp.location
    }
}

impl MultiTaskProblem for LandscapeProblem {
    fn tasks(&self) -> usize {
        2
    }

    fn shared_dim(&self) -> usize {
        self.spec.dimension
    }

    fn task_dim(&self, _task: usize) -> usize {
        0
    }

    fn samples_per_task(&self) -> usize {
        self.spec.n_per_task
    }

    /// Uniform ball around the sharp minimum (or the flat one when
    /// `init_at_flat` is set) along every coordinate.
    fn init_params(&self, rng: &mut RngStream) -> Params {
        let mut shared = vec![0.0; self.spec.dimension];
        shared[0] = if self.spec.init_at_flat {
            self.minima.flat.location
        } else {
            self.minima.sharp.location
        };
        for v in shared.iter_mut() {
            *v += self.spec.init_radius * (2.0 * rng.uniform() - 1.0);
        }
        Params {
            shared,
            task: vec![Vec::new(); 2],
        }
    }

    fn evaluate_batch(&self, params: &Params, batch: &Batch) -> Evaluation {
        let dim = self.spec.dimension;
        let theta = &params.shared;
        let mut losses = Vec::with_capacity(2);
        let mut grads = Matrix::zeros(2, dim);
        for t in 0..2 {
            let idx = &batch.indices[t];
            let inv_b = 1.0 / idx.len() as f64;
            let mut noise_mean = vec![0.0; dim];
            for &i in idx {
                for (m, &x) in noise_mean.iter_mut().zip(self.data[t].row(i)) {
                    *m += x;
                }
            }
            noise_mean.iter_mut().for_each(|m| *m *= inv_b);

            let (value, grad0, _) = base(t, theta[0]);
            let mut loss = value + noise_mean[0] * theta[0];
            grads.set(t, 0, grad0 + noise_mean[0]);
            for j in 1..dim {
                loss += 0.5 * EXTRA_DIM_CURVATURE * theta[j] * theta[j] + noise_mean[j] * theta[j];
                grads.set(t, j, EXTRA_DIM_CURVATURE * theta[j] + noise_mean[j]);
            }
            losses.push(loss);
        }
        Evaluation {
            losses,
            shared_grads: grads,
            task_grads: vec![Vec::new(); 2],
        }
    }

    fn optimum(&self, _weights: &[f64]) -> Option<Vec<f64>> {
        None
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
    use crate::problems::sample_batch;
    use crate::rng::{RngStream, STREAM_DATA, STREAM_DATASET, STREAM_INIT};

    fn default_problem() -> LandscapeProblem {
        let spec = LandscapeSpec {
            dimension: 1,
            n_per_task: 64,
            data_noise: 1.0,
            init_radius: 0.05,
            init_at_flat: false,
        };
        let mut rng = RngStream::new(13, STREAM_DATASET);
        LandscapeProblem::generate(spec, &mut rng).unwrap()
    }

    #[test]
    fn default_instance_verifies() {
        let p = default_problem();
        let m = p.minima().unwrap();
        assert!(m.sharp.curvature >= 10.0 * m.flat.curvature);
        assert!(m.flat.loss < m.sharp.loss);
        assert!(mean_loss(m.sharp.location).1.abs() <= 1e-8);
        assert!(mean_loss(m.flat.location).1.abs() <= 1e-8);
        assert!(m.sharp.location < m.saddle && m.saddle < m.flat.location);
        // The saddle is a mean-loss maximum between the basins.
        assert!(mean_loss(m.saddle).2 < 0.0);
    }

    #[test]
    fn basin_classification_matches_the_saddle() {
        let p = default_problem();
        let m = p.minima().unwrap();
        assert!(!p.in_flat_basin(&[m.sharp.location]));
        assert!(p.in_flat_basin(&[m.flat.location]));
        assert!(!p.in_flat_basin(&[m.saddle - 1e-6]));
        assert!(p.in_flat_basin(&[m.saddle + 1e-6]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = LandscapeSpec {
            dimension: 2,
            n_per_task: 32,
            data_noise: 2.0,
            init_radius: 0.05,
            init_at_flat: false,
        };
        let mut rng = RngStream::new(17, STREAM_DATASET);
        let p = LandscapeProblem::generate(spec, &mut rng).unwrap();
        let mut data_rng = RngStream::new(17, STREAM_DATA);
        let mut point_rng = RngStream::new(18, STREAM_INIT);
        let step = 1e-5;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..2).map(|_| point_rng.normal() * 2.0).collect();
            let batch = sample_batch(32, 2, 4, &mut data_rng);
            let params = Params {
                shared: theta.clone(),
                task: vec![Vec::new(); 2],
            };
            let eval = p.evaluate_batch(&params, &batch);
            for t in 0..2 {
                for j in 0..2 {
                    let mut plus = params.clone();
                    plus.shared[j] += step;
                    let mut minus = params.clone();
                    minus.shared[j] -= step;
                    let fd = (p.evaluate_batch(&plus, &batch).losses[t]
                        - p.evaluate_batch(&minus, &batch).losses[t])
                        / (2.0 * step);
                    let analytic = eval.shared_grads.get(t, j);
                    assert!(
                        (analytic - fd).abs() / analytic.abs().max(1.0) <= 1e-4,
                        "task {t} coord {j}: {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn task_gradients_disagree_at_the_sharp_minimum() {
        let p = default_problem();
        let loc = p.sharp_location();
        let g0 = base(0, loc).1;
        let g1 = base(1, loc).1;
        assert!((g0 - g1).abs() > 1.0, "tasks barely disagree: {g0} vs {g1}");
        // They cancel at the mean-loss minimum.
        assert!((g0 + g1).abs() <= 2e-8);
    }

    #[test]
    fn init_ball_sits_inside_the_sharp_basin() {
        let p = default_problem();
        let mut rng = RngStream::new(99, STREAM_INIT);
        for _ in 0..100 {
            let params = p.init_params(&mut rng);
            assert!((params.shared[0] - p.sharp_location()).abs() <= p.spec().init_radius);
            assert!(!p.in_flat_basin(&params.shared));
        }
    }
}
