//! Learnable-weight strategies: gradnorm, uw, imtl_l. Each keeps a small
//! parameter vector and takes one inner gradient (or subgradient) step per
//! training iteration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::math::norm;

use super::{
    AggregationContext, AggregationResult, GRADNORM_LOSS0_FLOOR, GRADNORM_WEIGHT_FLOOR,
    LOG_PARAM_CLAMP,
};

/// Subgradient of |x|: 0 at the kink.
fn sgn0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradNormState {
    /// Learnable weights w, kept positive and summing to T.
    pub weights: Vec<f64>,
    /// ℓ⁰, captured from the first step's losses.
    pub initial_losses: Option<Vec<f64>>,
    pub alpha: f64,
    pub inner_lr: f64,
}

impl GradNormState {
    pub fn new(tasks: usize, alpha: f64, inner_lr: f64) -> Self {
        GradNormState {
            weights: vec![1.0; tasks],
            initial_losses: None,
            alpha,
            inner_lr,
        }
    }
}

/// GradNorm: one subgradient step on Σ_t |w_t‖g_t‖ − ḡ·r_t^α| with the
/// targets treated as constants, then clamp and renormalize so Σw = T.
/// Aggregates with w/T.
pub fn gradnorm_step(ctx: &AggregationContext, state: &mut GradNormState) -> AggregationResult {
    let t = ctx.tasks();
    let l0 = state
        .initial_losses
        .get_or_insert_with(|| {
            ctx.losses
                .iter()
                .map(|l| l.max(GRADNORM_LOSS0_FLOOR))
                .collect()
        })
        .clone();

    // Relative inverse training rates r_t = ℓ̃_t / mean(ℓ̃).
    let ltilde: Vec<f64> = ctx.losses.iter().zip(&l0).map(|(l, l0)| l / l0).collect();
    let mean_lt = ltilde.iter().sum::<f64>() / t as f64;
    let rates: Vec<f64> = if mean_lt < GRADNORM_LOSS0_FLOOR {
        vec![1.0; t]
    } else {
        ltilde.iter().map(|x| x / mean_lt).collect()
    };

    let gnorms: Vec<f64> = (0..t).map(|i| norm(ctx.grads.row(i))).collect();
    let gbar = state
        .weights
        .iter()
        .zip(&gnorms)
        .map(|(w, n)| w * n)
        .sum::<f64>()
        / t as f64;

    for i in 0..t {
        let target = gbar * rates[i].powf(state.alpha);
        let residual = state.weights[i] * gnorms[i] - target;
        state.weights[i] -= state.inner_lr * sgn0(residual) * gnorms[i];
        state.weights[i] = state.weights[i].max(GRADNORM_WEIGHT_FLOOR);
    }
    let sum: f64 = state.weights.iter().sum();
    for w in &mut state.weights {
        *w *= t as f64 / sum;
    }

    let eff: Vec<f64> = state.weights.iter().map(|w| w / t as f64).collect();
    AggregationResult::weighted(eff, ctx.grads)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UwState {
    /// Log-variance parameters s; the effective weight is exp(−s).
    pub log_params: Vec<f64>,
    pub inner_lr: f64,
}

impl UwState {
    pub fn new(tasks: usize, inner_lr: f64) -> Self {
        UwState {
            log_params: vec![0.0; tasks],
            inner_lr,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_params.iter().map(|s| (-s).exp()).collect()
    }
}

/// Uncertainty weighting: aggregate with λ_t = exp(−s_t), then one gradient
/// step on L(s) = Σ_t exp(−s_t)ℓ_t + s_t/2. The θ update uses the raw λ;
/// the reported weights are λ/Σλ with the scale in diagnostics.
pub fn uw_step(ctx: &AggregationContext, state: &mut UwState) -> AggregationResult {
    let lambda = state.weights();
    let shared_gradient = super::aggregate(&lambda, ctx.grads);

    for (s, (&l, &lam)) in state
        .log_params
        .iter_mut()
        .zip(ctx.losses.iter().zip(&lambda))
    {
        let grad = -lam * l + 0.5;
        *s = (*s - state.inner_lr * grad).clamp(-LOG_PARAM_CLAMP, LOG_PARAM_CLAMP);
    }

    let scale: f64 = lambda.iter().sum();
    let reported: Vec<f64> = lambda.iter().map(|x| x / scale).collect();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("weight_scale".to_string(), scale);
    AggregationResult {
        shared_gradient,
        effective_weights: Some(reported),
        diagnostics,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImtlLState {
    /// Scale parameters s; the effective weight is exp(s).
    pub log_params: Vec<f64>,
    pub inner_lr: f64,
}

impl ImtlLState {
    pub fn new(tasks: usize, inner_lr: f64) -> Self {
        ImtlLState {
            log_params: vec![0.0; tasks],
            inner_lr,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_params.iter().map(|s| s.exp()).collect()
    }

    /// One gradient step on Σ_t exp(s_t)ℓ_t − s_t.
    pub fn update(&mut self, losses: &[f64]) {
        let lambda = self.weights();
        for (s, (&l, &lam)) in self.log_params.iter_mut().zip(losses.iter().zip(&lambda)) {
            let grad = lam * l - 1.0;
            *s = (*s - self.inner_lr * grad).clamp(-LOG_PARAM_CLAMP, LOG_PARAM_CLAMP);
        }
    }
}

/// IMTL's loss-scale half: aggregate with λ_t = exp(s_t), then one gradient
/// step on Σ_t exp(s_t)ℓ_t − s_t (stationary at λ_t = 1/ℓ_t).
pub fn imtl_l_step(ctx: &AggregationContext, state: &mut ImtlLState) -> AggregationResult {
    let lambda = state.weights();
    state.update(ctx.losses);
    AggregationResult::weighted(lambda, ctx.grads)
}
