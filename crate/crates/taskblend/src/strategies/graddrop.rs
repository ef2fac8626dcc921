//! GradDrop: per-coordinate stochastic sign masking driven by the sign
//! purity of the task gradients.

use crate::rng::RngStream;

use super::{AggregationContext, AggregationResult, PURITY_DENOM_GUARD};

/// GradDrop with an explicit noise vector `e` (one U(0,1) draw per shared
/// coordinate). In the sign-adjusted view G̃ = sgn(θ) ⊙ G, each coordinate
/// keeps its positive entries when purity > e_j and its negative entries
/// when purity < e_j, where purity d_j = ½(1 + Σ_t G̃_tj / Σ_t |G̃_tj|).
/// Each task then leaks: s_t·original + (1−s_t)·masked. The output is the
/// task sum mapped back through sgn(θ). No scalar weights exist for this
/// masking, so `effective_weights` is `None`.
pub fn graddrop_mask_with_noise(
    ctx: &AggregationContext,
    leak: &[f64],
    e: &[f64],
) -> AggregationResult {
    let t = ctx.tasks();
    let d = ctx.dim();
    assert_eq!(leak.len(), t, "leak vector must have one entry per task");
    assert_eq!(
        e.len(),
        d,
        "noise vector must have one entry per coordinate"
    );
    let mut out = vec![0.0; d];
    for j in 0..d {
        // sgn(0) = +1.
        let sign_j = if ctx.shared_param_sign[j] < 0.0 {
            -1.0
        } else {
            1.0
        };
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        for i in 0..t {
            let adjusted = sign_j * ctx.grads.get(i, j);
            sum += adjusted;
            abs_sum += adjusted.abs();
        }
        let purity = if abs_sum < PURITY_DENOM_GUARD {
            0.5
        } else {
            0.5 * (1.0 + sum / abs_sum)
        };
        let mut column = 0.0;
        for (i, &leak_i) in leak.iter().enumerate() {
            let adjusted = sign_j * ctx.grads.get(i, j);
            let keep = (purity > e[j] && adjusted > 0.0) || (purity < e[j] && adjusted < 0.0);
            let masked = if keep { adjusted } else { 0.0 };
            column += leak_i * adjusted + (1.0 - leak_i) * masked;
        }
        out[j] = sign_j * column;
    }
    AggregationResult {
        shared_gradient: out,
        effective_weights: None,
        diagnostics: Default::default(),
    }
}

/// GradDrop drawing its per-coordinate noise from the weights stream.
pub fn graddrop_mask(
    ctx: &AggregationContext,
    leak: &[f64],
    rng: &mut RngStream,
) -> AggregationResult {
    let e: Vec<f64> = (0..ctx.dim()).map(|_| rng.uniform()).collect();
    graddrop_mask_with_noise(ctx, leak, &e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use crate::rng::{RngStream, STREAM_WEIGHTS};
    use crate::strategies::test_util::ctx_of;

    #[test]
    fn purity_example_keeps_the_majority_side() {
        // T=2, one coordinate, sgn(θ) = +1, gradients (3, −1):
        // purity = ½(1 + 2/4) = 0.75.
        let grads = Matrix::from_rows(&[vec![3.0], vec![-1.0]]);
        let sign = [1.0];
        let losses = [1.0, 1.0];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        let keep_pos = graddrop_mask_with_noise(&ctx, &[0.0, 0.0], &[0.5]);
        assert_eq!(keep_pos.shared_gradient, vec![3.0]);
        let keep_neg = graddrop_mask_with_noise(&ctx, &[0.0, 0.0], &[0.9]);
        assert_eq!(keep_neg.shared_gradient, vec![-1.0]);
    }

    #[test]
    fn consensus_coordinates_are_never_dropped() {
        // All tasks agree in sign: purity is 1 (or 0), so any e < 1 keeps
        // every entry.
        let grads = Matrix::from_rows(&[vec![1.0, -2.0], vec![2.0, -3.0]]);
        let sign = [1.0, 1.0];
        let losses = [1.0, 1.0];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        for e in [0.01, 0.5, 0.99] {
            let result = graddrop_mask_with_noise(&ctx, &[0.0, 0.0], &[e, e]);
            assert_eq!(result.shared_gradient, vec![3.0, -5.0]);
        }
    }

    #[test]
    fn full_leak_is_the_plain_sum() {
        let mut rng = RngStream::new(13, STREAM_WEIGHTS);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.normal()).collect())
                .collect();
            let grads = Matrix::from_rows(&rows);
            let sign: Vec<f64> = (0..4)
                .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect();
            let losses = [1.0, 1.0, 1.0];
            let ctx = ctx_of(&losses, &grads, &sign, 0);
            let result = graddrop_mask(&ctx, &[1.0, 1.0, 1.0], &mut rng);
            for j in 0..4 {
                let plain: f64 = (0..3).map(|i| grads.get(i, j)).sum();
                assert!((result.shared_gradient[j] - plain).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn negative_parameter_signs_flip_the_adjusted_view() {
        // With sgn(θ) = −1 and gradients (−3, 1) the adjusted column is
        // (3, −1): same purity as the positive example, mapped back.
        let grads = Matrix::from_rows(&[vec![-3.0], vec![1.0]]);
        let sign = [-1.0];
        let losses = [1.0, 1.0];
        let ctx = ctx_of(&losses, &grads, &sign, 0);
        let keep_pos = graddrop_mask_with_noise(&ctx, &[0.0, 0.0], &[0.5]);
        assert_eq!(keep_pos.shared_gradient, vec![-3.0]);
        let keep_neg = graddrop_mask_with_noise(&ctx, &[0.0, 0.0], &[0.9]);
        assert_eq!(keep_neg.shared_gradient, vec![1.0]);
    }
}
