//! IMTL's gradient half (imtl_g) and the combined strategy: the aggregated
//! gradient is constrained to have equal projections onto every task's unit
//! gradient, which pins the weights up to scale.

use std::collections::BTreeMap;

use crate::math::{dot, norm, scaled, solve_linear_ridge, Matrix, ZERO_NORM_GUARD};

use super::{AggregationContext, AggregationResult, ImtlLState};

/// IMTL-G: find λ with λ₁ = 1 − Σ_{t≥2} α_t such that g = Σ λ_t g_t has the
/// same inner product with every unit gradient u_t. The α solve reduces to
/// the (T−1)×(T−1) system (N Dᵀ)α = N g₁ with N rows u₁−u_t and D rows
/// g₁−g_t. Falls back to equal weights (diagnostics `fallback` = 1) if the
/// system stays singular after the ridge retry or any gradient is zero.
pub fn imtl_g_solve(ctx: &AggregationContext) -> AggregationResult {
    let t = ctx.tasks();
    if t == 1 {
        return AggregationResult::weighted(vec![1.0], ctx.grads);
    }

    let norms: Vec<f64> = (0..t).map(|i| norm(ctx.grads.row(i))).collect();
    if norms.iter().any(|&n| n <= ZERO_NORM_GUARD) {
        return ew_fallback(ctx, t);
    }
    let units: Vec<Vec<f64>> = (0..t)
        .map(|i| scaled(ctx.grads.row(i), 1.0 / norms[i]))
        .collect();

    let g1 = ctx.grads.row(0);
    let mut system = Matrix::zeros(t - 1, t - 1);
    let mut rhs = vec![0.0; t - 1];
    for row in 1..t {
        let n_row: Vec<f64> = units[0]
            .iter()
            .zip(&units[row])
            .map(|(a, b)| a - b)
            .collect();
        for col in 1..t {
            let d_col: Vec<f64> = g1
                .iter()
                .zip(ctx.grads.row(col))
                .map(|(a, b)| a - b)
                .collect();
            system.set(row - 1, col - 1, dot(&n_row, &d_col));
        }
        rhs[row - 1] = dot(&n_row, g1);
    }

    match solve_linear_ridge(&system, &rhs, 0.0) {
        Ok(solution) => {
            let alpha_sum: f64 = solution.x.iter().sum();
            let mut weights = Vec::with_capacity(t);
            weights.push(1.0 - alpha_sum);
            weights.extend_from_slice(&solution.x);
            let mut result = AggregationResult::weighted(weights, ctx.grads);
            if solution.used_fallback {
                result.diagnostics.insert("ridge_fallback".to_string(), 1.0);
            }
            result
        }
        Err(_) => ew_fallback(ctx, t),
    }
}

fn ew_fallback(ctx: &AggregationContext, t: usize) -> AggregationResult {
    let mut result = AggregationResult::weighted(vec![1.0 / t as f64; t], ctx.grads);
    result.diagnostics.insert("fallback".to_string(), 1.0);
    result
}

/// Combined IMTL: apply the learned loss scales exp(s_t) to losses and
/// gradients, take the imtl_l parameter step, then run imtl_g on the scaled
/// gradients. The effective weight on the raw g_t is exp(s_t)·λG_t.
pub fn imtl_combined_step(ctx: &AggregationContext, state: &mut ImtlLState) -> AggregationResult {
    let scale = state.weights();
    state.update(ctx.losses);

    let scaled_rows: Vec<Vec<f64>> = (0..ctx.tasks())
        .map(|i| scaled(ctx.grads.row(i), scale[i]))
        .collect();
    let scaled_grads = Matrix::from_rows(&scaled_rows);
    let scaled_ctx = AggregationContext {
        losses: ctx.losses,
        grads: &scaled_grads,
        shared_param_sign: ctx.shared_param_sign,
        iteration: ctx.iteration,
    };
    let inner = imtl_g_solve(&scaled_ctx);

    let weights = inner.effective_weights.as_ref().map(|lambda_g| {
        lambda_g
            .iter()
            .zip(&scale)
            .map(|(lg, s)| lg * s)
            .collect::<Vec<f64>>()
    });
    let mut diagnostics: BTreeMap<String, f64> = inner.diagnostics;
    diagnostics.insert("loss_scale_sum".to_string(), scale.iter().sum());
    AggregationResult {
        shared_gradient: inner.shared_gradient,
        effective_weights: weights,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, STREAM_WEIGHTS};
    use crate::strategies::test_util::{ctx_of, random_grads};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn orthonormal_pair_solved_by_hand() {
        // g₁ = (1,0), g₂ = (0,1): the 1×1 system is 2α = 1, so λ = (½, ½)
        // and both unit projections equal ½.
        let grads = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sign = [1.0, 1.0];
        let result = imtl_g_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
        let w = result.effective_weights.unwrap();
        assert_close(w[0], 0.5, 1e-12);
        assert_close(w[1], 0.5, 1e-12);
        assert_close(result.shared_gradient[0], 0.5, 1e-12);
        assert_close(result.shared_gradient[1], 0.5, 1e-12);
    }

    #[test]
    fn duplicate_gradients_take_the_ridge_path_and_stay_finite() {
        let grads = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let sign = [1.0, 1.0];
        let result = imtl_g_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
        assert!(result.shared_gradient.iter().all(|v| v.is_finite()));
        assert!(
            result.diagnostics.contains_key("ridge_fallback")
                || result.diagnostics.contains_key("fallback")
        );
    }

    #[test]
    fn zero_gradient_falls_back_to_equal_weights() {
        let grads = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let sign = [1.0, 1.0];
        let result = imtl_g_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
        assert_eq!(result.diagnostics.get("fallback"), Some(&1.0));
        assert_eq!(result.effective_weights.unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn projections_onto_unit_gradients_are_equal() {
        let mut rng = RngStream::new(37, STREAM_WEIGHTS);
        for t in 2..=5 {
            for _ in 0..50 {
                let grads = random_grads(t, 12, &mut rng);
                let losses = vec![1.0; t];
                let sign = vec![1.0; 12];
                let result = imtl_g_solve(&ctx_of(&losses, &grads, &sign, 0));
                assert!(!result.diagnostics.contains_key("fallback"));
                let projections: Vec<f64> = (0..t)
                    .map(|i| {
                        let u = scaled(grads.row(i), 1.0 / norm(grads.row(i)));
                        dot(&result.shared_gradient, &u)
                    })
                    .collect();
                for p in &projections {
                    assert!(
                        (p - projections[0]).abs() <= 1e-6,
                        "projections differ: {projections:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn combined_imtl_applies_loss_scales() {
        // With s = 0 the combined strategy equals plain imtl_g.
        let mut rng = RngStream::new(39, STREAM_WEIGHTS);
        let grads = random_grads(3, 8, &mut rng);
        let losses = [1.0, 2.0, 0.5];
        let sign = vec![1.0; 8];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        let mut state = ImtlLState::new(3, 0.025);
        let combined = imtl_combined_step(&ctx, &mut state);
        let plain = imtl_g_solve(&ctx);
        for (a, b) in combined.shared_gradient.iter().zip(&plain.shared_gradient) {
            assert_close(*a, *b, 1e-12);
        }
        // The imtl_l half still took its parameter step.
        assert!(state.log_params.iter().any(|&s| s != 0.0));
    }
}
