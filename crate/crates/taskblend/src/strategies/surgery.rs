//! Gradient surgery: pcgrad projects away pairwise conflicts, gradvac pulls
//! pairwise cosines up to an EMA target. Both visit the other tasks in a
//! fresh random order per task per iteration and aggregate the mean of the
//! adjusted gradients.

use serde::{Deserialize, Serialize};

use crate::math::{axpy, dot, norm, Matrix, ZERO_NORM_GUARD};
use crate::rng::RngStream;

use super::{AggregationContext, AggregationResult, COSINE_CLAMP_EPS};

/// Coefficient bookkeeping: `coeffs[p][t]` is the weight of g_t inside the
/// adjusted ĝ_p, so the reported effective weights are the column means.
struct Adjustment {
    adjusted: Vec<Vec<f64>>,
    coeffs: Matrix,
}

impl Adjustment {
    fn new(grads: &Matrix) -> Self {
        let t = grads.rows();
        let adjusted = (0..t).map(|i| grads.row(i).to_vec()).collect();
        let mut coeffs = Matrix::zeros(t, t);
        for i in 0..t {
            coeffs.set(i, i, 1.0);
        }
        Adjustment { adjusted, coeffs }
    }

    fn add(&mut self, p: usize, q: usize, coef: f64, grads: &Matrix) {
        axpy(&mut self.adjusted[p], coef, grads.row(q));
        self.coeffs.set(p, q, self.coeffs.get(p, q) + coef);
    }

    fn finish(self) -> AggregationResult {
        let t = self.adjusted.len();
        let d = self.adjusted[0].len();
        let mut shared = vec![0.0; d];
        for g in &self.adjusted {
            axpy(&mut shared, 1.0 / t as f64, g);
        }
        let weights: Vec<f64> = (0..t)
            .map(|col| (0..t).map(|p| self.coeffs.get(p, col)).sum::<f64>() / t as f64)
            .collect();
        AggregationResult {
            shared_gradient: shared,
            effective_weights: Some(weights),
            diagnostics: Default::default(),
        }
    }
}

fn pcgrad_adjust(ctx: &AggregationContext, rng: &mut RngStream) -> Adjustment {
    let t = ctx.tasks();
    let norms_sq: Vec<f64> = (0..t)
        .map(|i| crate::math::norm_sq(ctx.grads.row(i)))
        .collect();
    let mut adj = Adjustment::new(ctx.grads);
    for p in 0..t {
        let order = rng.permutation(t);
        for q in order {
            if q == p || norms_sq[q] <= ZERO_NORM_GUARD * ZERO_NORM_GUARD {
                continue;
            }
            let conflict = dot(&adj.adjusted[p], ctx.grads.row(q));
            if conflict < 0.0 {
                adj.add(p, q, -conflict / norms_sq[q], ctx.grads);
            }
        }
    }
    adj
}

/// PCGrad: for each task p, subtract from its running gradient ĝ_p the
/// projection onto every conflicting g_q (ĝ_p·g_q < 0), visiting q in a
/// random order. Zero gradients pass through unprojected.
pub fn pcgrad_project(ctx: &AggregationContext, rng: &mut RngStream) -> AggregationResult {
    pcgrad_adjust(ctx, rng).finish()
}

/// The per-task projected gradients ĝ_p themselves, for property checks.
pub fn pcgrad_adjusted_gradients(ctx: &AggregationContext, rng: &mut RngStream) -> Vec<Vec<f64>> {
    pcgrad_adjust(ctx, rng).adjusted
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradVacState {
    /// EMA cosine targets φ̂, one per ordered task pair, initialized at 0.
    pub ema: Vec<Vec<f64>>,
    pub beta: f64,
}

impl GradVacState {
    pub fn new(tasks: usize, beta: f64) -> Self {
        GradVacState {
            ema: vec![vec![0.0; tasks]; tasks],
            beta,
        }
    }
}

/// GradVac: like pcgrad, but each visited pair compares the current cosine
/// φ = cos(ĝ_p, g_q) against the EMA target φ̂_pq. When φ < φ̂ the running
/// gradient gains
///   ‖ĝ_p‖·(φ̂√(1−φ²) − φ√(1−φ̂²)) / (√(1−φ̂²)·‖g_q‖) · g_q,
/// which rotates ĝ_p so its cosine with g_q meets φ̂. The EMA then absorbs
/// the observed φ. With φ̂ ≡ 0 and β = 0 this is exactly pcgrad.
pub fn gradvac_adjust(
    ctx: &AggregationContext,
    state: &mut GradVacState,
    rng: &mut RngStream,
) -> AggregationResult {
    let t = ctx.tasks();
    let norms: Vec<f64> = (0..t).map(|i| norm(ctx.grads.row(i))).collect();
    let clamp = 1.0 - COSINE_CLAMP_EPS;
    let mut adj = Adjustment::new(ctx.grads);
    for p in 0..t {
        let order = rng.permutation(t);
        for q in order {
            if q == p || norms[q] <= ZERO_NORM_GUARD {
                continue;
            }
            let n_p = norm(&adj.adjusted[p]);
            if n_p <= ZERO_NORM_GUARD {
                continue;
            }
            let phi =
                (dot(&adj.adjusted[p], ctx.grads.row(q)) / (n_p * norms[q])).clamp(-clamp, clamp);
            let phi_hat = state.ema[p][q].clamp(-clamp, clamp);
            if phi < phi_hat {
                let a = (phi_hat * (1.0 - phi * phi).sqrt()
                    - phi * (1.0 - phi_hat * phi_hat).sqrt())
                    / (1.0 - phi_hat * phi_hat).sqrt();
                adj.add(p, q, n_p * a / norms[q], ctx.grads);
            }
            state.ema[p][q] = (1.0 - state.beta) * state.ema[p][q] + state.beta * phi;
        }
    }
    adj.finish()
}
