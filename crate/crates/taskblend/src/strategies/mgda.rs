//! MGDA: the min-norm point in the convex hull of the task gradients,
//! found by Frank-Wolfe over the simplex with away steps and exact line
//! search. Away steps matter: when the solution sits on a face of the
//! simplex, plain Frank-Wolfe zigzags at O(1/k) and cannot reach the gap
//! tolerance within the iteration cap, while the away-step variant
//! converges linearly.

use std::collections::BTreeMap;

use crate::math::{dot, norm_sq, sub};

use super::{AggregationContext, AggregationResult, FW_GAP_TOL, FW_MAX_ITERS};

/// Solves argmin_λ { ‖λᵀG‖² | λ ∈ Δ^T }, stopping once the Frank-Wolfe
/// duality gap falls below [`FW_GAP_TOL`] or after [`FW_MAX_ITERS`]
/// iterations. Reports the final gap in diagnostics.
pub fn mgda_solve(ctx: &AggregationContext) -> AggregationResult {
    let t = ctx.tasks();
    let mut diagnostics = BTreeMap::new();
    if t == 1 {
        diagnostics.insert("duality_gap".to_string(), 0.0);
        let mut result = AggregationResult::weighted(vec![1.0], ctx.grads);
        result.diagnostics = diagnostics;
        return result;
    }

    // Work entirely in the T × T Gram space: (Mλ)_t = g_t·(λᵀG) and the
    // objective is λᵀMλ = ‖λᵀG‖².
    let gram = ctx.grads.gram();
    let mut lambda = vec![1.0 / t as f64; t];
    let mut gap = 0.0;
    for _ in 0..FW_MAX_ITERS {
        let mv: Vec<f64> = (0..t).map(|i| dot(gram.row(i), &lambda)).collect();
        let obj = dot(&lambda, &mv);
        let (t_fw, &mv_fw) = mv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        gap = 2.0 * (obj - mv_fw);
        if gap <= FW_GAP_TOL {
            break;
        }
        // Away vertex: the worst active coordinate.
        let (t_away, &mv_away) = mv
            .iter()
            .enumerate()
            .filter(|&(i, _)| lambda[i] > 0.0)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let gap_away = 2.0 * (mv_away - obj);

        if gap >= gap_away || lambda[t_away] >= 1.0 {
            // Toward step λ ← λ + γ(e_fw − λ); exact minimizer of the
            // quadratic along the segment.
            let denom = obj - 2.0 * mv_fw + gram.get(t_fw, t_fw);
            let gamma = if denom <= f64::EPSILON {
                1.0
            } else {
                ((obj - mv_fw) / denom).clamp(0.0, 1.0)
            };
            for (i, l) in lambda.iter_mut().enumerate() {
                *l = (1.0 - gamma) * *l + if i == t_fw { gamma } else { 0.0 };
            }
        } else {
            // Away step λ ← λ + γ(λ − e_away), capped where λ_away hits 0.
            let denom = obj - 2.0 * mv_away + gram.get(t_away, t_away);
            let gamma_max = lambda[t_away] / (1.0 - lambda[t_away]);
            let gamma = if denom <= f64::EPSILON {
                gamma_max
            } else {
                ((mv_away - obj) / denom).clamp(0.0, gamma_max)
            };
            for (i, l) in lambda.iter_mut().enumerate() {
                *l = (1.0 + gamma) * *l - if i == t_away { gamma } else { 0.0 };
                *l = l.max(0.0);
            }
        }
        // Keep the iterate exactly on the simplex against float drift.
        let sum: f64 = lambda.iter().sum();
        for l in &mut lambda {
            *l /= sum;
        }
    }
    diagnostics.insert("duality_gap".to_string(), gap.max(0.0));
    let mut result = AggregationResult::weighted(lambda, ctx.grads);
    result.diagnostics = diagnostics;
    result
}

/// Closed-form weight on g₁ for the two-task min-norm problem:
/// γ* = clamp(((g₂−g₁)·g₂)/‖g₁−g₂‖², 0, 1), so λ = (γ*, 1−γ*).
pub fn mgda_two_task_gamma(g1: &[f64], g2: &[f64]) -> f64 {
    let diff = sub(g1, g2);
    let denom = norm_sq(&diff);
    if denom <= f64::EPSILON {
        return 0.5;
    }
    let gamma = dot(&sub(g2, g1), g2) / denom;
    gamma.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use crate::rng::RngStream;
    use crate::strategies::test_util::ctx_of;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn orthonormal_pair_splits_evenly() {
        let grads = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sign = [1.0, 1.0];
        let result = mgda_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
        let w = result.effective_weights.unwrap();
        assert_close(w[0], 0.5, 1e-9);
        assert_close(w[1], 0.5, 1e-9);
        assert_close(result.shared_gradient[0], 0.5, 1e-9);
        assert_close(result.shared_gradient[1], 0.5, 1e-9);
    }

    #[test]
    fn colinear_pair_selects_the_shorter_gradient() {
        let grads = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]);
        let sign = [1.0, 1.0];
        let result = mgda_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
        let w = result.effective_weights.unwrap();
        assert_close(w[0], 0.0, 1e-9);
        assert_close(w[1], 1.0, 1e-9);
    }

    #[test]
    fn single_task_is_identity() {
        let grads = Matrix::from_rows(&[vec![3.0, -1.0]]);
        let sign = [1.0, 1.0];
        let result = mgda_solve(&ctx_of(&[1.0], &grads, &sign, 0));
        assert_eq!(result.effective_weights.unwrap(), vec![1.0]);
        assert_eq!(result.shared_gradient, vec![3.0, -1.0]);
    }

    #[test]
    fn matches_two_task_closed_form_on_random_pairs() {
        let mut rng = RngStream::new(23, 1);
        for _ in 0..200 {
            let g1: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let g2: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let gamma = mgda_two_task_gamma(&g1, &g2);
            let grads = Matrix::from_rows(&[g1, g2]);
            let sign = vec![1.0; 6];
            let result = mgda_solve(&ctx_of(&[1.0, 1.0], &grads, &sign, 0));
            let w = result.effective_weights.unwrap();
            assert_close(w[0], gamma, 1e-4);
            assert!(result.diagnostics["duality_gap"] <= FW_GAP_TOL);
        }
    }

    #[test]
    fn gap_converges_for_small_task_counts() {
        let mut rng = RngStream::new(29, 1);
        for t in 2..=5 {
            for _ in 0..50 {
                let rows: Vec<Vec<f64>> = (0..t)
                    .map(|_| (0..20).map(|_| rng.normal()).collect())
                    .collect();
                let grads = Matrix::from_rows(&rows);
                let losses = vec![1.0; t];
                let sign = vec![1.0; 20];
                let result = mgda_solve(&ctx_of(&losses, &grads, &sign, 0));
                assert!(
                    result.diagnostics["duality_gap"] <= FW_GAP_TOL,
                    "gap {} at T={t}",
                    result.diagnostics["duality_gap"]
                );
                let w = result.effective_weights.unwrap();
                let sum: f64 = w.iter().sum();
                assert_close(sum, 1.0, 1e-9);
                assert!(w.iter().all(|&x| x >= 0.0));
            }
        }
    }
}
