//! Random loss-weight sampling: draw a raw vector from one of six
//! distributions, then normalize it onto the simplex.
//!
//! Bernoulli-family draws are normalized by their sum; all other kinds go
//! through the stabilized softmax. Either way the result is a nonnegative
//! vector summing to 1, resampled fresh every training iteration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::softmax;
use crate::rng::RngStream;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("sum normalization of an all-zero vector")]
    ZeroSum,
    #[error("unknown weight distribution {0:?}")]
    UnknownDistribution(String),
}

/// The weight distributions p(λ̃).
///
/// `PointMassUniform` is not part of the configurable set; it always returns
/// uniform weights and exists so that equal weighting can be expressed as a
/// degenerate sampler when testing code-path equivalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    Uniform,
    Normal,
    Dirichlet,
    Bernoulli,
    ConstrainedBernoulli,
    RandomNormal,
    PointMassUniform,
}

impl WeightDistribution {
    /// The six configurable distributions, in their serialized order.
    pub const ALL: [WeightDistribution; 6] = [
        WeightDistribution::Uniform,
        WeightDistribution::Normal,
        WeightDistribution::Dirichlet,
        WeightDistribution::Bernoulli,
        WeightDistribution::ConstrainedBernoulli,
        WeightDistribution::RandomNormal,
    ];

    /// Sum normalization applies to the Bernoulli family (and the point
    /// mass, where it is exact); softmax applies to everything else.
    pub fn uses_sum_normalization(self) -> bool {
        matches!(
            self,
            WeightDistribution::Bernoulli
                | WeightDistribution::ConstrainedBernoulli
                | WeightDistribution::PointMassUniform
        )
    }

    /// E\[λ\] = (1/T, ..., 1/T) holds for every kind except RandomNormal,
    /// whose mean is intractable.
    pub fn has_uniform_mean(self) -> bool {
        !matches!(self, WeightDistribution::RandomNormal)
    }
}

impl fmt::Display for WeightDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            WeightDistribution::Uniform => "uniform",
            WeightDistribution::Normal => "normal",
            WeightDistribution::Dirichlet => "dirichlet",
            WeightDistribution::Bernoulli => "bernoulli",
            WeightDistribution::ConstrainedBernoulli => "constrained_bernoulli",
            WeightDistribution::RandomNormal => "random_normal",
            WeightDistribution::PointMassUniform => "point_mass_uniform",
        };
        f.write_str(name)
    }
}

impl FromStr for WeightDistribution {
    type Err = SamplingError;

    /// Parses the six configurable names; the point mass is deliberately
    /// not reachable from configuration.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightDistribution::Uniform),
            "normal" => Ok(WeightDistribution::Normal),
            "dirichlet" => Ok(WeightDistribution::Dirichlet),
            "bernoulli" => Ok(WeightDistribution::Bernoulli),
            "constrained_bernoulli" => Ok(WeightDistribution::ConstrainedBernoulli),
            "random_normal" => Ok(WeightDistribution::RandomNormal),
            other => Err(SamplingError::UnknownDistribution(other.to_string())),
        }
    }
}

/// A normalized weight vector on the simplex: entries ≥ 0 summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps a vector that is already on the simplex (debug-asserted).
    pub fn from_simplex(w: Vec<f64>) -> Self {
        debug_assert!(
            w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "vector off the simplex: {w:?}"
        );
        WeightVector(w)
    }

    pub fn uniform(t: usize) -> Self {
        assert!(t >= 1);
        WeightVector(vec![1.0 / t as f64; t])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Draws the raw (pre-normalization) vector λ̃ from `dist`.
///
/// Bernoulli resamples until at least one entry is 1, so the sum rule is
/// always defined. RandomNormal draws a fresh mean and variance from U(0,1)
/// per task on every call; the sampled variance enters as σ = √v.
pub fn sample_raw(dist: WeightDistribution, t: usize, rng: &mut RngStream) -> Vec<f64> {
    assert!(t >= 1, "task count must be at least 1");
    match dist {
        WeightDistribution::Uniform => (0..t).map(|_| rng.uniform()).collect(),
        WeightDistribution::Normal => (0..t).map(|_| rng.normal()).collect(),
        WeightDistribution::Dirichlet => loop {
            // Dirichlet(α=1) via normalized Exp(1) draws.
            let e: Vec<f64> = (0..t).map(|_| -(1.0 - rng.uniform()).ln()).collect();
            let sum: f64 = e.iter().sum();
            if sum > 1e-300 {
                return e.into_iter().map(|x| x / sum).collect();
            }
        },
        WeightDistribution::Bernoulli => loop {
            let v: Vec<f64> = (0..t)
                .map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            if v.iter().any(|&x| x > 0.0) {
                return v;
            }
        },
        WeightDistribution::ConstrainedBernoulli => {
            let mut v = vec![0.0; t];
            v[rng.index(t)] = 1.0;
            v
        }
        WeightDistribution::RandomNormal => (0..t)
            .map(|_| {
                let mean = rng.uniform();
                let var = rng.uniform();
                mean + var.sqrt() * rng.normal()
            })
            .collect(),
        WeightDistribution::PointMassUniform => vec![1.0 / t as f64; t],
    }
}

/// Applies the normalization map f for the given distribution kind.
pub fn normalize(raw: &[f64], dist: WeightDistribution) -> Result<WeightVector, SamplingError> {
    if dist.uses_sum_normalization() {
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(SamplingError::ZeroSum);
        }
        Ok(WeightVector(raw.iter().map(|x| x / sum).collect()))
    } else {
        Ok(WeightVector(softmax(raw)))
    }
}

/// Samples λ̃ ~ p(λ̃) and normalizes it onto the simplex.
pub fn sample_weights(
    dist: WeightDistribution,
    t: usize,
    rng: &mut RngStream,
) -> Result<WeightVector, SamplingError> {
    let raw = sample_raw(dist, t, rng);
    normalize(&raw, dist)
}

/// Stateful sampler wrapper. Only RandomNormal carries state: when
/// `freeze_hyperparams` is set, the per-task (mean, σ) pairs are drawn once
/// at construction instead of fresh per call.
#[derive(Debug, Clone)]
pub struct WeightSampler {
    dist: WeightDistribution,
    tasks: usize,
    frozen: Option<Vec<(f64, f64)>>,
}

impl WeightSampler {
    pub fn new(
        dist: WeightDistribution,
        tasks: usize,
        freeze_hyperparams: bool,
        rng: &mut RngStream,
    ) -> Self {
        let frozen = if freeze_hyperparams && dist == WeightDistribution::RandomNormal {
            Some(
                (0..tasks)
                    .map(|_| {
                        let mean = rng.uniform();
                        let sigma = rng.uniform().sqrt();
                        (mean, sigma)
                    })
                    .collect(),
            )
        } else {
            None
        };
        WeightSampler {
            dist,
            tasks,
            frozen,
        }
    }

    pub fn distribution(&self) -> WeightDistribution {
        self.dist
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<WeightVector, SamplingError> {
        match &self.frozen {
            Some(params) => {
                let raw: Vec<f64> = params
                    .iter()
                    .map(|&(mean, sigma)| mean + sigma * rng.normal())
                    .collect();
                normalize(&raw, self.dist)
            }
            None => sample_weights(self.dist, self.tasks, rng),
        }
    }
}
