//! Dynamic weight average: weights from the softmax of the ratio of the two
//! most recent epoch-mean losses.

use serde::{Deserialize, Serialize};

use crate::math::softmax;

use super::DWA_RATIO_GUARD;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DwaState {
    /// Iterations averaged into one history entry.
    pub epoch_len: usize,
    /// Softmax temperature divisor applied to the loss ratios.
    pub temperature: f64,
    accum: Vec<f64>,
    count: usize,
    /// Epoch-mean losses ℓ^{k-1}.
    prev: Option<Vec<f64>>,
    /// Epoch-mean losses ℓ^{k-2}.
    prev_prev: Option<Vec<f64>>,
}

impl DwaState {
    pub fn new(tasks: usize, epoch_len: usize, temperature: f64) -> Self {
        DwaState {
            epoch_len: epoch_len.max(1),
            temperature,
            accum: vec![0.0; tasks],
            count: 0,
            prev: None,
            prev_prev: None,
        }
    }

    /// Feeds one iteration's batch losses into the running epoch mean.
    pub fn observe(&mut self, losses: &[f64]) {
        for (a, &l) in self.accum.iter_mut().zip(losses) {
            *a += l;
        }
        self.count += 1;
        if self.count == self.epoch_len {
            let mean: Vec<f64> = self.accum.iter().map(|a| a / self.count as f64).collect();
            self.prev_prev = self.prev.take();
            self.prev = Some(mean);
            self.accum.iter_mut().for_each(|a| *a = 0.0);
            self.count = 0;
        }
    }
}

/// w = T·softmax(ℓ^{k-1} ⊘ ℓ^{k-2}); uniform (all ones) until two epochs of
/// history exist. Ratio entries fall back to 1 where the older loss is
/// below [`DWA_RATIO_GUARD`]. The returned vector sums to T; aggregation
/// divides by T so the effective weights are the softmax itself.
pub fn dwa_weights(state: &DwaState, tasks: usize) -> Vec<f64> {
    match (&state.prev, &state.prev_prev) {
        (Some(prev), Some(prev_prev)) => {
            let ratios: Vec<f64> = prev
                .iter()
                .zip(prev_prev)
                .map(|(&a, &b)| if b < DWA_RATIO_GUARD { 1.0 } else { a / b })
                .map(|r| r / state.temperature)
                .collect();
            softmax(&ratios)
                .into_iter()
                .map(|x| x * tasks as f64)
                .collect()
        }
        _ => vec![1.0; tasks],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    fn state_with_history(prev: Vec<f64>, prev_prev: Vec<f64>) -> DwaState {
        let mut s = DwaState::new(prev.len(), 1, 1.0);
        s.observe(&prev_prev);
        s.observe(&prev);
        s
    }

    #[test]
    fn uniform_before_two_epochs() {
        let mut s = DwaState::new(2, 1, 1.0);
        assert_eq!(dwa_weights(&s, 2), vec![1.0, 1.0]);
        s.observe(&[1.0, 2.0]);
        assert_eq!(dwa_weights(&s, 2), vec![1.0, 1.0]);
    }

    #[test]
    fn equal_ratios_give_unit_weights() {
        let s = state_with_history(vec![1.0, 2.0], vec![1.0, 2.0]);
        let w = dwa_weights(&s, 2);
        assert_close(w[0], 1.0, 1e-12);
        assert_close(w[1], 1.0, 1e-12);
    }

    #[test]
    fn hand_computed_softmax_weights() {
        // ℓ^{k-1} = (2, 1), ℓ^{k-2} = (1, 1): ratios (2, 1), so
        // w = 2·softmax(2, 1) = (2e², 2e)/(e² + e).
        let s = state_with_history(vec![2.0, 1.0], vec![1.0, 1.0]);
        let w = dwa_weights(&s, 2);
        let e = std::f64::consts::E;
        let denom = e * e + e;
        assert_close(w[0], 2.0 * e * e / denom, 1e-12);
        assert_close(w[1], 2.0 * e / denom, 1e-12);
    }

    #[test]
    fn tiny_old_loss_falls_back_to_unit_ratio() {
        let s = state_with_history(vec![5.0, 1.0], vec![0.0, 1.0]);
        let w = dwa_weights(&s, 2);
        // Both ratios collapse to 1.
        assert_close(w[0], 1.0, 1e-12);
        assert_close(w[1], 1.0, 1e-12);
    }

    #[test]
    fn epoch_averaging_uses_means() {
        let mut s = DwaState::new(1, 2, 1.0);
        s.observe(&[1.0]);
        s.observe(&[3.0]); // epoch mean 2
        s.observe(&[4.0]);
        s.observe(&[4.0]); // epoch mean 4
        assert_eq!(s.prev, Some(vec![4.0]));
        assert_eq!(s.prev_prev, Some(vec![2.0]));
    }
}
