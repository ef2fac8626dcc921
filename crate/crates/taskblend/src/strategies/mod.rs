//! The loss-weighting / gradient-aggregation strategies behind one
//! interface: each step maps (per-task losses, per-task shared gradients,
//! strategy state, rng) to an aggregated shared gradient plus the effective
//! weights it applied.
//!
//! Weight-based strategies (ew, rlw, dwa, uw, gradnorm, imtl_l, mgda)
//! satisfy `shared_gradient = scale · Σ_t w_t g_t` with the reported
//! weights; gradient-surgery strategies (pcgrad, gradvac) report the
//! coefficients they accumulated, and graddrop reports no scalar weights
//! because its masking is per-coordinate.

mod dwa;
mod graddrop;
mod imtl;
mod learning;
mod mgda;
mod surgery;

pub use dwa::{dwa_weights, DwaState};
pub use graddrop::{graddrop_mask, graddrop_mask_with_noise};
pub use imtl::imtl_g_solve;
pub use learning::{gradnorm_step, imtl_l_step, uw_step, GradNormState, ImtlLState, UwState};
pub use mgda::{mgda_solve, mgda_two_task_gamma};
pub use surgery::{gradvac_adjust, pcgrad_adjusted_gradients, pcgrad_project, GradVacState};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{MathError, Matrix};
use crate::rng::RngStream;
use crate::sampling::{SamplingError, WeightDistribution, WeightSampler, WeightVector};

/// Inner learning rate for the learnable-weight strategies
/// (gradnorm, uw, imtl_l).
pub const DEFAULT_INNER_LR: f64 = 0.025;
/// GradNorm restoring-force exponent.
pub const DEFAULT_GRADNORM_ALPHA: f64 = 1.5;
/// GradVac EMA rate for the per-pair cosine targets.
pub const DEFAULT_GRADVAC_BETA: f64 = 0.01;
/// DWA averages losses over this many iterations per history entry.
pub const DEFAULT_DWA_EPOCH_LEN: usize = 10;
/// GradNorm weights never drop below this floor.
pub const GRADNORM_WEIGHT_FLOOR: f64 = 1e-6;
/// GradNorm initial losses are clamped below by this.
pub const GRADNORM_LOSS0_FLOOR: f64 = 1e-12;
/// UW / IMTL-L log-parameters are clamped to ± this bound.
pub const LOG_PARAM_CLAMP: f64 = 10.0;
/// Frank-Wolfe stops once the duality gap falls below this.
pub const FW_GAP_TOL: f64 = 1e-6;
/// Frank-Wolfe iteration cap.
pub const FW_MAX_ITERS: usize = 250;
/// DWA loss ratios fall back to 1 when the older loss is below this.
pub const DWA_RATIO_GUARD: f64 = 1e-12;
/// GradDrop purity is 1/2 when the per-coordinate magnitude sum is below this.
pub const PURITY_DENOM_GUARD: f64 = 1e-30;
/// Cosines are clamped to ±(1 − this) before entering square roots.
pub const COSINE_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("strategy {kind} requires a weight distribution")]
    MissingDistribution { kind: StrategyKind },
    #[error("unknown strategy {0:?}")]
    UnknownKind(String),
    #[error("invalid strategy params: {0}")]
    InvalidParams(String),
}

/// The per-iteration inputs every strategy sees.
#[derive(Debug, Clone, Copy)]
pub struct AggregationContext<'a> {
    /// Per-task batch losses, length T.
    pub losses: &'a [f64],
    /// Per-task gradients of the shared parameters, T × d (row t is g_t).
    pub grads: &'a Matrix,
    /// Signs of the shared parameters (graddrop only), length d.
    pub shared_param_sign: &'a [f64],
    /// Iteration counter, starting at 0.
    pub iteration: u64,
}

impl<'a> AggregationContext<'a> {
    pub fn tasks(&self) -> usize {
        self.grads.rows()
    }

    pub fn dim(&self) -> usize {
        self.grads.cols()
    }
}

/// What a strategy step produces.
#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub shared_gradient: Vec<f64>,
    /// Effective per-task weights when the strategy has them. May leave the
    /// simplex (imtl_g can go negative, pcgrad/gradvac exceed 1); reported
    /// as-is, never re-normalized.
    pub effective_weights: Option<Vec<f64>>,
    /// Scalar diagnostics: `duality_gap`, `fallback`, `ridge_fallback`,
    /// `weight_scale`.
    pub diagnostics: BTreeMap<String, f64>,
}

impl AggregationResult {
    pub fn weighted(weights: Vec<f64>, grads: &Matrix) -> Self {
        let shared_gradient = aggregate(&weights, grads);
        AggregationResult {
            shared_gradient,
            effective_weights: Some(weights),
            diagnostics: BTreeMap::new(),
        }
    }

    /// Ratio of reported weights to the aggregation weights (1 unless set).
    pub fn weight_scale(&self) -> f64 {
        self.diagnostics.get("weight_scale").copied().unwrap_or(1.0)
    }
}

/// Σ_t w_t g_t.
pub fn aggregate(weights: &[f64], grads: &Matrix) -> Vec<f64> {
    grads.weighted_row_sum(weights)
}

/// Uniform weights (1/T, ..., 1/T).
pub fn ew_weights(tasks: usize) -> WeightVector {
    WeightVector::uniform(tasks)
}

/// Random loss weights: λ = f(λ̃), λ̃ ~ p(λ̃).
pub fn rlw_weights(
    dist: WeightDistribution,
    tasks: usize,
    rng: &mut RngStream,
) -> Result<WeightVector, SamplingError> {
    crate::sampling::sample_weights(dist, tasks, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ew")]
    Ew,
    #[serde(rename = "rlw")]
    Rlw,
    #[serde(rename = "gradnorm")]
    GradNorm,
    #[serde(rename = "uw")]
    Uw,
    #[serde(rename = "mgda")]
    Mgda,
    #[serde(rename = "dwa")]
    Dwa,
    #[serde(rename = "pcgrad")]
    PcGrad,
    #[serde(rename = "graddrop")]
    GradDrop,
    #[serde(rename = "imtl_g")]
    ImtlG,
    #[serde(rename = "imtl_l")]
    ImtlL,
    #[serde(rename = "imtl")]
    Imtl,
    #[serde(rename = "gradvac")]
    GradVac,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 12] = [
        StrategyKind::Ew,
        StrategyKind::Rlw,
        StrategyKind::GradNorm,
        StrategyKind::Uw,
        StrategyKind::Mgda,
        StrategyKind::Dwa,
        StrategyKind::PcGrad,
        StrategyKind::GradDrop,
        StrategyKind::ImtlG,
        StrategyKind::ImtlL,
        StrategyKind::Imtl,
        StrategyKind::GradVac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Ew => "ew",
            StrategyKind::Rlw => "rlw",
            StrategyKind::GradNorm => "gradnorm",
            StrategyKind::Uw => "uw",
            StrategyKind::Mgda => "mgda",
            StrategyKind::Dwa => "dwa",
            StrategyKind::PcGrad => "pcgrad",
            StrategyKind::GradDrop => "graddrop",
            StrategyKind::ImtlG => "imtl_g",
            StrategyKind::ImtlL => "imtl_l",
            StrategyKind::Imtl => "imtl",
            StrategyKind::GradVac => "gradvac",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StrategyError::UnknownKind(s.to_string()))
    }
}

/// Per-strategy tuning knobs, all optional with pinned defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyParams {
    /// GradNorm exponent α (default 1.5).
    pub gradnorm_alpha: Option<f64>,
    /// Inner learning rate for gradnorm / uw / imtl_l (default 0.025).
    pub inner_lr: Option<f64>,
    /// GradVac EMA rate β (default 0.01).
    pub gradvac_beta: Option<f64>,
    /// GradDrop per-task leak s ∈ \[0,1\]^T (default all zero).
    pub graddrop_leak: Option<Vec<f64>>,
    /// Iterations per DWA history entry (default 10).
    pub dwa_epoch_len: Option<usize>,
    /// DWA softmax temperature divisor (default 1).
    pub dwa_temperature: Option<f64>,
    /// rlw(random_normal) only: draw the per-task mean/variance once per
    /// run instead of fresh each iteration (default false).
    pub freeze_random_normal: Option<bool>,
}

impl StrategyParams {
    pub fn validate(&self, tasks: usize) -> Result<(), StrategyError> {
        let bad = |m: String| Err(StrategyError::InvalidParams(m));
        if let Some(lr) = self.inner_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("inner_lr must be positive, got {lr}"));
            }
        }
        if let Some(alpha) = self.gradnorm_alpha {
            if !alpha.is_finite() {
                return bad(format!("gradnorm_alpha must be finite, got {alpha}"));
            }
        }
        if let Some(beta) = self.gradvac_beta {
            if !(0.0..=1.0).contains(&beta) {
                return bad(format!("gradvac_beta must lie in [0, 1], got {beta}"));
            }
        }
        if let Some(leak) = &self.graddrop_leak {
            if leak.len() != tasks {
                return bad(format!(
                    "graddrop_leak needs one entry per task ({tasks}), got {}",
                    leak.len()
                ));
            }
            if leak.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return bad("graddrop_leak entries must lie in [0, 1]".to_string());
            }
        }
        if let Some(len) = self.dwa_epoch_len {
            if len == 0 {
                return bad("dwa_epoch_len must be at least 1".to_string());
            }
        }
        if let Some(temp) = self.dwa_temperature {
            if !(temp > 0.0 && temp.is_finite()) {
                return bad(format!("dwa_temperature must be positive, got {temp}"));
            }
        }
        Ok(())
    }
}

/// A configured strategy plus its persistent state.
#[derive(Debug, Clone)]
pub enum StrategyEngine {
    Ew {
        tasks: usize,
    },
    Rlw {
        sampler: WeightSampler,
        tasks: usize,
    },
    GradNorm(GradNormState),
    Uw(UwState),
    ImtlL(ImtlLState),
    Mgda,
    Dwa(DwaState),
    PcGrad,
    GradDrop {
        leak: Vec<f64>,
    },
    ImtlG,
    /// Combined IMTL: learned loss scales (imtl_l) feeding the gradient
    /// balancer (imtl_g).
    Imtl(ImtlLState),
    GradVac(GradVacState),
}

impl StrategyEngine {
    /// Builds an engine. `rng` is only consumed when rlw(random_normal)
    /// freezes its hyperparameters at construction.
    pub fn new(
        kind: StrategyKind,
        distribution: Option<WeightDistribution>,
        params: &StrategyParams,
        tasks: usize,
        rng: &mut RngStream,
    ) -> Result<Self, StrategyError> {
        params.validate(tasks)?;
        let inner_lr = params.inner_lr.unwrap_or(DEFAULT_INNER_LR);
        Ok(match kind {
            StrategyKind::Ew => StrategyEngine::Ew { tasks },
            StrategyKind::Rlw => {
                let dist = distribution.ok_or(StrategyError::MissingDistribution { kind })?;
                let freeze = params.freeze_random_normal.unwrap_or(false);
                StrategyEngine::Rlw {
                    sampler: WeightSampler::new(dist, tasks, freeze, rng),
                    tasks,
                }
            }
            StrategyKind::GradNorm => StrategyEngine::GradNorm(GradNormState::new(
                tasks,
                params.gradnorm_alpha.unwrap_or(DEFAULT_GRADNORM_ALPHA),
                inner_lr,
            )),
            StrategyKind::Uw => StrategyEngine::Uw(UwState::new(tasks, inner_lr)),
            StrategyKind::ImtlL => StrategyEngine::ImtlL(ImtlLState::new(tasks, inner_lr)),
            StrategyKind::Mgda => StrategyEngine::Mgda,
            StrategyKind::Dwa => StrategyEngine::Dwa(DwaState::new(
                tasks,
                params.dwa_epoch_len.unwrap_or(DEFAULT_DWA_EPOCH_LEN),
                params.dwa_temperature.unwrap_or(1.0),
            )),
            StrategyKind::PcGrad => StrategyEngine::PcGrad,
            StrategyKind::GradDrop => {
                let leak = params
                    .graddrop_leak
                    .clone()
                    .unwrap_or_else(|| vec![0.0; tasks]);
                StrategyEngine::GradDrop { leak }
            }
            StrategyKind::ImtlG => StrategyEngine::ImtlG,
            StrategyKind::Imtl => StrategyEngine::Imtl(ImtlLState::new(tasks, inner_lr)),
            StrategyKind::GradVac => StrategyEngine::GradVac(GradVacState::new(
                tasks,
                params.gradvac_beta.unwrap_or(DEFAULT_GRADVAC_BETA),
            )),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyEngine::Ew { .. } => StrategyKind::Ew,
            StrategyEngine::Rlw { .. } => StrategyKind::Rlw,
            StrategyEngine::GradNorm(_) => StrategyKind::GradNorm,
            StrategyEngine::Uw(_) => StrategyKind::Uw,
            StrategyEngine::ImtlL(_) => StrategyKind::ImtlL,
            StrategyEngine::Mgda => StrategyKind::Mgda,
            StrategyEngine::Dwa(_) => StrategyKind::Dwa,
            StrategyEngine::PcGrad => StrategyKind::PcGrad,
            StrategyEngine::GradDrop { .. } => StrategyKind::GradDrop,
            StrategyEngine::ImtlG => StrategyKind::ImtlG,
            StrategyEngine::Imtl(_) => StrategyKind::Imtl,
            StrategyEngine::GradVac(_) => StrategyKind::GradVac,
        }
    }

    /// One aggregation step. `rng` must be the weights stream.
    pub fn step(
        &mut self,
        ctx: &AggregationContext,
        rng: &mut RngStream,
    ) -> Result<AggregationResult, StrategyError> {
        match self {
            StrategyEngine::Ew { tasks } => Ok(AggregationResult::weighted(
                ew_weights(*tasks).into_vec(),
                ctx.grads,
            )),
            StrategyEngine::Rlw { sampler, .. } => {
                let w = sampler.sample(rng)?;
                Ok(AggregationResult::weighted(w.into_vec(), ctx.grads))
            }
            StrategyEngine::GradNorm(state) => Ok(gradnorm_step(ctx, state)),
            StrategyEngine::Uw(state) => Ok(uw_step(ctx, state)),
            StrategyEngine::ImtlL(state) => Ok(imtl_l_step(ctx, state)),
            StrategyEngine::Mgda => Ok(mgda_solve(ctx)),
            StrategyEngine::Dwa(state) => {
                let raw = dwa_weights(state, ctx.tasks());
                let t = ctx.tasks() as f64;
                let eff: Vec<f64> = raw.iter().map(|w| w / t).collect();
                let result = AggregationResult::weighted(eff, ctx.grads);
                state.observe(ctx.losses);
                Ok(result)
            }
            StrategyEngine::PcGrad => Ok(pcgrad_project(ctx, rng)),
            StrategyEngine::GradDrop { leak } => Ok(graddrop_mask(ctx, leak, rng)),
            StrategyEngine::ImtlG => Ok(imtl_g_solve(ctx)),
            StrategyEngine::Imtl(state) => Ok(imtl::imtl_combined_step(ctx, state)),
            StrategyEngine::GradVac(state) => Ok(gradvac_adjust(ctx, state, rng)),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use crate::math::{norm, sub};
    use crate::rng::{RngStream, STREAM_WEIGHTS};

    #[test]
    fn ew_is_uniform() {
        assert_eq!(ew_weights(3).weights(), &[1.0 / 3.0; 3]);
        assert_eq!(ew_weights(1).weights(), &[1.0]);
        assert_eq!(ew_weights(4).weights(), &[0.25; 4]);
    }

    #[test]
    fn aggregate_examples() {
        let g = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(aggregate(&[1.0, 0.0], &g), vec![2.0, 0.0]);
        assert_eq!(aggregate(&[0.5, 0.5], &g), vec![1.0, 1.0]);
    }

    #[test]
    fn ew_aggregate_is_column_mean() {
        let mut rng = RngStream::new(17, STREAM_WEIGHTS);
        let g = random_grads(3, 7, &mut rng);
        let agg = aggregate(ew_weights(3).weights(), &g);
        for (j, &v) in agg.iter().enumerate() {
            let mean = (g.get(0, j) + g.get(1, j) + g.get(2, j)) / 3.0;
            assert!((v - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in StrategyKind::ALL {
            let parsed: StrategyKind = kind.name().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("foo".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn rlw_engine_requires_distribution() {
        let mut rng = RngStream::new(1, STREAM_WEIGHTS);
        let err = StrategyEngine::new(
            StrategyKind::Rlw,
            None,
            &StrategyParams::default(),
            3,
            &mut rng,
        );
        assert!(matches!(
            err,
            Err(StrategyError::MissingDistribution { .. })
        ));
    }

    /// Weight-based strategies must satisfy
    /// shared_gradient = scale · Σ_t w_t g_t to 1e-9 relative error.
    #[test]
    fn weight_based_strategies_satisfy_aggregation_identity() {
        let weight_based = [
            StrategyKind::Ew,
            StrategyKind::Rlw,
            StrategyKind::Dwa,
            StrategyKind::Uw,
            StrategyKind::GradNorm,
            StrategyKind::ImtlL,
            StrategyKind::Mgda,
        ];
        let mut rng = RngStream::new(55, STREAM_WEIGHTS);
        for kind in weight_based {
            let mut engine = StrategyEngine::new(
                kind,
                Some(WeightDistribution::Normal),
                &StrategyParams::default(),
                4,
                &mut rng,
            )
            .unwrap();
            for iter in 0..20 {
                let grads = random_grads(4, 9, &mut rng);
                let losses: Vec<f64> = (0..4).map(|_| rng.uniform() * 3.0 + 0.2).collect();
                let sign = vec![1.0; 9];
                let ctx = ctx_of(&losses, &grads, &sign, iter);
                let result = engine.step(&ctx, &mut rng).unwrap();
                let w = result.effective_weights.as_ref().expect("weight-based");
                let scaled_w: Vec<f64> = w.iter().map(|x| x * result.weight_scale()).collect();
                let recon = aggregate(&scaled_w, &grads);
                let err = norm(&sub(&recon, &result.shared_gradient));
                let denom = norm(&result.shared_gradient).max(1e-12);
                assert!(
                    err / denom <= 1e-9,
                    "{kind}: aggregation identity off by {} relative",
                    err / denom
                );
            }
        }
    }

    /// At T = 1 every strategy collapses to plain single-task descent: the
    /// aggregate is the lone gradient.
    #[test]
    fn single_task_reduces_to_the_raw_gradient() {
        let mut rng = RngStream::new(91, STREAM_WEIGHTS);
        let grads = random_grads(1, 6, &mut rng);
        let losses = [0.7];
        let sign = vec![1.0; 6];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        for kind in StrategyKind::ALL {
            let mut engine = StrategyEngine::new(
                kind,
                Some(WeightDistribution::Dirichlet),
                &StrategyParams::default(),
                1,
                &mut rng,
            )
            .unwrap();
            let result = engine.step(&ctx, &mut rng).unwrap();
            for (a, b) in result.shared_gradient.iter().zip(grads.row(0)) {
                assert!((a - b).abs() <= 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn params_validation_catches_bad_values() {
        let cases = [
            StrategyParams {
                inner_lr: Some(-0.1),
                ..Default::default()
            },
            StrategyParams {
                gradvac_beta: Some(1.5),
                ..Default::default()
            },
            StrategyParams {
                graddrop_leak: Some(vec![0.5, 0.5]),
                ..Default::default()
            },
            StrategyParams {
                graddrop_leak: Some(vec![0.5, 0.5, 2.0]),
                ..Default::default()
            },
            StrategyParams {
                dwa_epoch_len: Some(0),
                ..Default::default()
            },
            StrategyParams {
                dwa_temperature: Some(0.0),
                ..Default::default()
            },
        ];
        for params in cases {
            assert!(
                matches!(params.validate(3), Err(StrategyError::InvalidParams(_))),
                "accepted bad params {params:?}"
            );
        }
        assert!(StrategyParams::default().validate(3).is_ok());
    }

    /// ew and rlw-with-a-point-mass must walk the same code path to the
    /// same weights.
    #[test]
    fn ew_equals_point_mass_rlw() {
        let mut rng = RngStream::new(77, STREAM_WEIGHTS);
        let mut ew = StrategyEngine::new(
            StrategyKind::Ew,
            None,
            &StrategyParams::default(),
            3,
            &mut rng,
        )
        .unwrap();
        let mut rlw = StrategyEngine::Rlw {
            sampler: WeightSampler::new(WeightDistribution::PointMassUniform, 3, false, &mut rng),
            tasks: 3,
        };
        let grads = random_grads(3, 5, &mut rng);
        let losses = [1.0, 2.0, 3.0];
        let sign = vec![1.0; 5];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        let mut rng_a = RngStream::new(5, STREAM_WEIGHTS);
        let mut rng_b = RngStream::new(5, STREAM_WEIGHTS);
        let a = ew.step(&ctx, &mut rng_a).unwrap();
        let b = rlw.step(&ctx, &mut rng_b).unwrap();
        assert_eq!(a.shared_gradient, b.shared_gradient);
        assert_eq!(a.effective_weights, b.effective_weights);
        assert_eq!(
            rng_a.next_u64(),
            rng_b.next_u64(),
            "rng consumption differs"
        );
    }
}
