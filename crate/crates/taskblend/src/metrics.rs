//! Evaluation metrics and theorem-verification statistics: the Δ_p score
//! against the equal-weighting baseline, the fixed-step convergence bound
//! check, the decreasing-step rate fit, and minima-escape frequencies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{
    sample_batch, Batch, LandscapeProblem, MultiTaskProblem, Params, QuadraticTaskFamily,
};
use crate::rng::{RngStream, STREAM_DATA};
use crate::sampling::WeightDistribution;
use crate::strategies::{StrategyKind, StrategyParams};
use crate::trainer::{train, OptimizerSpec, RunRecord, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("baseline metric value is zero at task {task}, metric {metric}")]
    ZeroBaseline { task: usize, metric: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid metrics config: {0}")]
    Config(String),
}

/// Direction of improvement for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    HigherIsBetter,
    LowerIsBetter,
}

/// Per-task metric directions; task t carries N_t ≥ 1 metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub per_task: Vec<Vec<MetricDirection>>,
}

impl MetricSpec {
    /// Every task scored by a single lower-is-better metric (a loss).
    pub fn losses(tasks: usize) -> Self {
        MetricSpec {
            per_task: vec![vec![MetricDirection::LowerIsBetter]; tasks],
        }
    }
}

/// M_{t,n} values for one method, shaped like the metric spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResults {
    pub values: Vec<Vec<f64>>,
}

/// Δ_p: the mean relative improvement over the baseline in percent,
/// signed so that improvement is positive for both metric directions.
pub fn delta_p(
    method: &MethodResults,
    baseline: &MethodResults,
    spec: &MetricSpec,
) -> Result<f64, MetricsError> {
    let tasks = spec.per_task.len();
    if method.values.len() != tasks || baseline.values.len() != tasks {
        return Err(MetricsError::ShapeMismatch(format!(
            "expected {tasks} tasks in both method and baseline"
        )));
    }
    let mut total = 0.0;
    for (t, directions) in spec.per_task.iter().enumerate() {
        let n_t = directions.len();
        if n_t == 0 {
            return Err(MetricsError::Config(format!("task {t} has no metrics")));
        }
        if method.values[t].len() != n_t || baseline.values[t].len() != n_t {
            return Err(MetricsError::ShapeMismatch(format!(
                "task {t} expects {n_t} metric values"
            )));
        }
        let mut task_sum = 0.0;
        for (n, direction) in directions.iter().enumerate() {
            let base = baseline.values[t][n];
            if base == 0.0 {
                return Err(MetricsError::ZeroBaseline { task: t, metric: n });
            }
            let sign = match direction {
                MetricDirection::HigherIsBetter => 1.0,
                MetricDirection::LowerIsBetter => -1.0,
            };
            task_sum += sign * (method.values[t][n] - base) / base;
        }
        total += task_sum / n_t as f64;
    }
    Ok(100.0 * total / tasks as f64)
}

/// Estimates κ = Σ_t E‖∇ℓ_t(batch; θ*)‖² by Monte Carlo over batch draws
/// at the uniform-weight empirical optimum.
pub fn estimate_kappa(
    family: &QuadraticTaskFamily,
    batch_size: usize,
    draws: usize,
    seed: u64,
) -> f64 {
    let tasks = family.tasks();
    let n = family.samples_per_task();
    let theta_star = family
        .optimum(&vec![1.0 / tasks as f64; tasks])
        .expect("quadratic family has a closed-form optimum");
    let params = Params {
        shared: theta_star,
        task: vec![Vec::new(); tasks],
    };
    let mut rng = RngStream::new(seed, STREAM_DATA);
    let mut second_moments = vec![0.0; tasks];
    for _ in 0..draws {
        let batch = sample_batch(n, tasks, batch_size, &mut rng);
        let eval = family.evaluate_batch(&params, &batch);
        for (t, sm) in second_moments.iter_mut().enumerate() {
            *sm += crate::math::norm_sq(eval.shared_grads.row(t));
        }
    }
    second_moments.iter().map(|sm| sm / draws as f64).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
    pub initial_dist_sq: f64,
    /// max over logged k of seed-mean / bound.
    pub max_violation_ratio: f64,
    /// max over logged k of (seed-mean − bound)/SE; negative means the
    /// bound holds everywhere with margin.
    pub max_excess_sigmas: f64,
    /// Seed-mean squared distance over the last tenth of the run.
    pub plateau: f64,
    /// ηκ/(2c).
    pub plateau_bound: f64,
    pub logged_points: usize,
}

/// Checks the fixed-step convergence bound
/// E‖θ_k − θ*‖² ≤ (1 − 2ηc)^k‖θ₀ − θ*‖² + ηκ/(2c)
/// against seed-averaged runs. Errors unless η ≤ 1/(2c).
pub fn theorem1_check(
    runs: &[RunRecord],
    family: &QuadraticTaskFamily,
    eta: f64,
    kappa: f64,
) -> Result<Theorem1Report, MetricsError> {
    let c = family.min_curvature();
    if eta > 1.0 / (2.0 * c) {
        return Err(MetricsError::Config(format!(
            "theorem requires eta <= 1/(2c) = {}, got {eta}",
            1.0 / (2.0 * c)
        )));
    }
    if runs.is_empty() {
        return Err(MetricsError::InsufficientData("no runs".into()));
    }
    let rows = runs[0].rows.len();
    if rows == 0 {
        return Err(MetricsError::InsufficientData(
            "runs have no logged rows".into(),
        ));
    }
    for r in runs {
        if r.rows.len() != rows {
            return Err(MetricsError::ShapeMismatch(
                "runs must share one logging grid".into(),
            ));
        }
    }
    let d0 = runs[0]
        .initial_dist_sq
        .ok_or_else(|| MetricsError::Config("runs lack distance-to-optimum".into()))?;
    let plateau_bound = eta * kappa / (2.0 * c);
    let n_seeds = runs.len() as f64;

    let mut max_violation_ratio: f64 = d0 / (d0 + plateau_bound); // the k = 0 point
    let mut max_excess_sigmas = f64::NEG_INFINITY;
    let mut tail_sum = 0.0;
    let mut tail_count = 0usize;
    let tail_start = runs[0].rows[rows - 1]
        .iter
        .saturating_sub(runs[0].rows[rows - 1].iter / 10);
    for i in 0..rows {
        let k = runs[0].rows[i].iter;
        let dists: Vec<f64> = runs
            .iter()
            .map(|r| r.rows[i].dist_sq.expect("distance logged"))
            .collect();
        let mean = dists.iter().sum::<f64>() / n_seeds;
        let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_seeds - 1.0);
        let se = (var / n_seeds).sqrt();
        let bound = (1.0 - 2.0 * eta * c).powi(k as i32) * d0 + plateau_bound;
        max_violation_ratio = max_violation_ratio.max(mean / bound);
        max_excess_sigmas = max_excess_sigmas.max((mean - bound) / se.max(1e-300));
        if k >= tail_start {
            tail_sum += mean;
            tail_count += 1;
        }
    }
    Ok(Theorem1Report {
        c,
        eta,
        kappa,
        initial_dist_sq: d0,
        max_violation_ratio,
        max_excess_sigmas,
        plateau: tail_sum / tail_count as f64,
        plateau_bound,
        logged_points: rows + 1,
    })
}

/// Least-squares slope of ln(seed-mean ‖θ_k − θ*‖²) against ln k over the
/// last decade of iterations (k ≥ K/10). Needs at least 10 logged points
/// in that window.
pub fn rate_fit(runs: &[RunRecord]) -> Result<f64, MetricsError> {
    if runs.is_empty() || runs[0].rows.is_empty() {
        return Err(MetricsError::InsufficientData("no logged rows".into()));
    }
    let rows = runs[0].rows.len();
    for r in runs {
        if r.rows.len() != rows {
            return Err(MetricsError::ShapeMismatch(
                "runs must share one logging grid".into(),
            ));
        }
    }
    let last_iter = runs[0].rows[rows - 1].iter;
    let window_start = last_iter / 10;
    let mut points = Vec::new();
    for i in 0..rows {
        let k = runs[0].rows[i].iter;
        if k < window_start.max(1) {
            continue;
        }
        let mean: f64 = runs
            .iter()
            .map(|r| r.rows[i].dist_sq.expect("distance logged"))
            .sum::<f64>()
            / runs.len() as f64;
        points.push(((k as f64).ln(), mean.max(1e-300).ln()));
    }
    if points.len() < 10 {
        return Err(MetricsError::InsufficientData(format!(
            "only {} points in the last decade, need 10",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Ok(sxy / sxx)
}

/// Fraction of seeds whose final iterate lands in the flat basin after
/// training from the initialization ball around the sharp minimum.
pub fn escape_frequency(
    problem: &LandscapeProblem,
    strategy: StrategyKind,
    distribution: Option<WeightDistribution>,
    optimizer: &OptimizerSpec,
    iterations: u64,
    batch_size: usize,
    seeds: &[u64],
) -> Result<f64, TrainError> {
    let mut escaped = 0usize;
    for &seed in seeds {
        let config = TrainConfig {
            iterations,
            batch_size,
            seed,
            log_stride: iterations.max(1),
            strategy,
            strategy_params: StrategyParams::default(),
            distribution,
            optimizer: optimizer.clone(),
        };
        let record = train(problem, &config)?;
        if problem.in_flat_basin(&record.final_params.shared) {
            escaped += 1;
        }
    }
    Ok(escaped as f64 / seeds.len() as f64)
}

/// Full-data per-task losses at a fixed point, exposed for report building.
pub fn full_losses_at(problem: &dyn MultiTaskProblem, params: &Params) -> Vec<f64> {
    problem
        .evaluate_batch(
            params,
            &Batch::full(problem.samples_per_task(), problem.tasks()),
        )
        .losses
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn delta_p_of_a_method_against_itself_is_zero() {
        let spec = MetricSpec {
            per_task: vec![
                vec![
                    MetricDirection::HigherIsBetter,
                    MetricDirection::LowerIsBetter,
                ],
                vec![MetricDirection::LowerIsBetter],
            ],
        };
        let results = MethodResults {
            values: vec![vec![54.3, 0.38], vec![23.6]],
        };
        assert_eq!(delta_p(&results, &results, &spec).unwrap(), 0.0);
    }

    #[test]
    fn higher_better_improvement_is_positive() {
        let spec = MetricSpec {
            per_task: vec![vec![MetricDirection::HigherIsBetter]],
        };
        let method = MethodResults {
            values: vec![vec![110.0]],
        };
        let base = MethodResults {
            values: vec![vec![100.0]],
        };
        assert_close(delta_p(&method, &base, &spec).unwrap(), 10.0, 1e-12);
    }

    #[test]
    fn lower_better_improvement_is_positive() {
        let spec = MetricSpec {
            per_task: vec![vec![MetricDirection::LowerIsBetter]],
        };
        let method = MethodResults {
            values: vec![vec![90.0]],
        };
        let base = MethodResults {
            values: vec![vec![100.0]],
        };
        assert_close(delta_p(&method, &base, &spec).unwrap(), 10.0, 1e-12);
    }

    #[test]
    fn mixed_direction_hand_example() {
        // Task 1: one higher-better metric 105 vs 100 (+5%); task 2: one
        // lower-better 80 vs 100 (+20%) and one higher-better 90 vs 100
        // (−10%), so Δ_p = ½(5% + ½(20% − 10%)) = 5%.
        let spec = MetricSpec {
            per_task: vec![
                vec![MetricDirection::HigherIsBetter],
                vec![
                    MetricDirection::LowerIsBetter,
                    MetricDirection::HigherIsBetter,
                ],
            ],
        };
        let method = MethodResults {
            values: vec![vec![105.0], vec![80.0, 90.0]],
        };
        let base = MethodResults {
            values: vec![vec![100.0], vec![100.0, 100.0]],
        };
        assert_close(delta_p(&method, &base, &spec).unwrap(), 5.0, 1e-12);
    }

    #[test]
    fn delta_p_is_linear_in_the_method_values() {
        let spec = MetricSpec::losses(2);
        let base = MethodResults {
            values: vec![vec![2.0], vec![4.0]],
        };
        let a = MethodResults {
            values: vec![vec![1.0], vec![4.0]],
        };
        let b = MethodResults {
            values: vec![vec![2.0], vec![2.0]],
        };
        let ab = MethodResults {
            values: vec![vec![1.0], vec![2.0]],
        };
        let da = delta_p(&a, &base, &spec).unwrap();
        let db = delta_p(&b, &base, &spec).unwrap();
        let dab = delta_p(&ab, &base, &spec).unwrap();
        assert_close(dab, da + db, 1e-12);
    }

    #[test]
    fn zero_baseline_is_an_error() {
        let spec = MetricSpec::losses(1);
        let method = MethodResults {
            values: vec![vec![1.0]],
        };
        let base = MethodResults {
            values: vec![vec![0.0]],
        };
        assert!(matches!(
            delta_p(&method, &base, &spec),
            Err(MetricsError::ZeroBaseline { task: 0, metric: 0 })
        ));
    }

    #[test]
    fn rate_fit_requires_enough_points() {
        assert!(matches!(
            rate_fit(&[]),
            Err(MetricsError::InsufficientData(_))
        ));
    }

    use crate::problems::{LandscapeProblem, LandscapeSpec, QuadraticSpec, QuadraticTaskFamily};
    use crate::rng::{RngStream, STREAM_DATASET};
    use crate::sampling::WeightDistribution;
    use crate::strategies::{StrategyKind, StrategyParams};
    use crate::trainer::TrainConfig;

    fn small_family(seed: u64) -> QuadraticTaskFamily {
        let spec = QuadraticSpec {
            tasks: 2,
            dim: 3,
            curvatures: vec![1.0, 1.5],
            centers: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            data_noise: 1.0,
            n_per_task: 64,
            init_theta: Some(vec![1.5, 1.5, 0.0]),
        };
        let mut rng = RngStream::new(seed, STREAM_DATASET);
        QuadraticTaskFamily::generate(spec, &mut rng).unwrap()
    }

    fn quadratic_runs(
        family: &QuadraticTaskFamily,
        optimizer: OptimizerSpec,
        seeds: usize,
        iterations: u64,
    ) -> Vec<crate::trainer::RunRecord> {
        (0..seeds)
            .map(|i| {
                let config = TrainConfig {
                    iterations,
                    batch_size: 8,
                    seed: 9000 + i as u64,
                    log_stride: 25,
                    strategy: StrategyKind::Rlw,
                    strategy_params: StrategyParams::default(),
                    distribution: Some(WeightDistribution::Normal),
                    optimizer: optimizer.clone(),
                };
                train(family, &config).unwrap()
            })
            .collect()
    }

    #[test]
    fn theorem1_rejects_oversized_steps() {
        let family = small_family(3);
        // c = 1 here, so the threshold is η ≤ 0.5.
        let runs = quadratic_runs(&family, OptimizerSpec::SgdFixed { eta: 0.05 }, 2, 100);
        assert!(matches!(
            theorem1_check(&runs, &family, 0.6, 1.0),
            Err(MetricsError::Config(_))
        ));
    }

    #[test]
    fn theorem1_k0_point_never_violates() {
        let family = small_family(3);
        let kappa = estimate_kappa(&family, 8, 2000, 4);
        let runs = quadratic_runs(&family, OptimizerSpec::SgdFixed { eta: 0.05 }, 20, 500);
        let report = theorem1_check(&runs, &family, 0.05, kappa).unwrap();
        // At k = 0 the bound is d0 + plateau and the mean is d0 exactly.
        assert!(report.initial_dist_sq / (report.initial_dist_sq + report.plateau_bound) <= 1.0);
        assert!(report.max_violation_ratio >= 0.0);
    }

    #[test]
    fn doubling_eta_doubles_the_plateau_bound_and_orders_plateaus() {
        let family = small_family(5);
        let kappa = estimate_kappa(&family, 8, 2000, 6);
        let runs_small = quadratic_runs(&family, OptimizerSpec::SgdFixed { eta: 0.04 }, 40, 2000);
        let runs_large = quadratic_runs(&family, OptimizerSpec::SgdFixed { eta: 0.08 }, 40, 2000);
        let small = theorem1_check(&runs_small, &family, 0.04, kappa).unwrap();
        let large = theorem1_check(&runs_large, &family, 0.08, kappa).unwrap();
        assert_close(large.plateau_bound, 2.0 * small.plateau_bound, 1e-12);
        assert!(
            large.plateau > small.plateau,
            "empirical plateaus not ordered: {} vs {}",
            large.plateau,
            small.plateau
        );
    }

    #[test]
    fn fixed_step_plateau_has_near_zero_slope() {
        let family = small_family(7);
        let runs = quadratic_runs(&family, OptimizerSpec::SgdFixed { eta: 0.05 }, 40, 3000);
        let slope = rate_fit(&runs).unwrap();
        assert!(slope.abs() <= 0.3, "plateau slope {slope} is not flat");
    }

    #[test]
    fn noiseless_single_task_contraction_beats_any_power_law() {
        // Zero data noise and one task: pure geometric decay, so the
        // log-log slope over the last decade is strongly negative.
        let spec = QuadraticSpec {
            tasks: 1,
            dim: 3,
            curvatures: vec![1.0],
            centers: vec![vec![1.0, 1.0, 0.0]],
            data_noise: 0.0,
            n_per_task: 16,
            init_theta: Some(vec![-1.0, -1.0, 0.0]),
        };
        let mut rng = RngStream::new(9, STREAM_DATASET);
        let family = QuadraticTaskFamily::generate(spec, &mut rng).unwrap();
        let config = TrainConfig {
            iterations: 2000,
            batch_size: 16,
            seed: 1,
            log_stride: 25,
            strategy: StrategyKind::Ew,
            strategy_params: StrategyParams::default(),
            distribution: None,
            optimizer: OptimizerSpec::SgdFixed { eta: 0.05 },
        };
        let run = train(&family, &config).unwrap();
        let slope = rate_fit(&[run]).unwrap();
        assert!(slope < -5.0, "expected strong decay, slope {slope}");
    }

    fn landscape(data_noise: f64, init_radius: f64, init_at_flat: bool) -> LandscapeProblem {
        let spec = LandscapeSpec {
            dimension: 1,
            n_per_task: 64,
            data_noise,
            init_radius,
            init_at_flat,
        };
        let mut rng = RngStream::new(11, STREAM_DATASET);
        LandscapeProblem::generate(spec, &mut rng).unwrap()
    }

    #[test]
    fn zero_noise_at_the_sharp_minimum_never_escapes() {
        let problem = landscape(0.0, 0.0, false);
        let seeds: Vec<u64> = (0..20).collect();
        let fraction = escape_frequency(
            &problem,
            StrategyKind::Ew,
            None,
            &OptimizerSpec::SgdFixed { eta: 0.005 },
            300,
            4,
            &seeds,
        )
        .unwrap();
        assert_eq!(fraction, 0.0);
    }

    #[test]
    fn flat_basin_initialization_always_stays() {
        let problem = landscape(0.5, 0.05, true);
        let seeds: Vec<u64> = (0..20).collect();
        for (strategy, dist) in [
            (StrategyKind::Ew, None),
            (StrategyKind::Rlw, Some(WeightDistribution::Normal)),
        ] {
            let fraction = escape_frequency(
                &problem,
                strategy,
                dist,
                &OptimizerSpec::SgdFixed { eta: 0.01 },
                300,
                4,
                &seeds,
            )
            .unwrap();
            assert_eq!(fraction, 1.0, "{strategy} left the flat basin");
        }
    }

    #[test]
    fn escape_frequency_is_reproducible() {
        let problem = landscape(5.0, 0.05, false);
        let seeds: Vec<u64> = (0..30).collect();
        let optimizer = OptimizerSpec::SgdFixed { eta: 0.02 };
        let a =
            escape_frequency(&problem, StrategyKind::Ew, None, &optimizer, 200, 4, &seeds).unwrap();
        let b =
            escape_frequency(&problem, StrategyKind::Ew, None, &optimizer, 200, 4, &seeds).unwrap();
        assert_eq!(a, b);
    }
}
