//! The verification suite: executable checks for the sampling, strategy,
//! convergence, noise, escape, and parity properties this crate is built
//! around. Every tolerance, seed, and problem size is pinned in
//! `defaults/verify_defaults.json`, which ships with the crate and is
//! embedded at compile time. The `acceptance` integration test and the CLI
//! `verify` subcommand both run exactly these checks.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::math::{dot, norm, scaled, Matrix};
use crate::metrics::{
    delta_p, escape_frequency, estimate_kappa, rate_fit, theorem1_check, MethodResults,
    MetricDirection, MetricSpec,
};
use crate::problems::{
    sample_batch, LandscapeProblem, LandscapeSpec, MultiTaskProblem, Params, QuadraticSpec,
    QuadraticTaskFamily, ToyMlpProblem, ToyMlpSpec,
};
use crate::rng::{RngStream, STREAM_DATA, STREAM_DATASET, STREAM_INIT, STREAM_WEIGHTS};
use crate::sampling::{sample_weights, WeightDistribution};
use crate::strategies::{
    gradvac_adjust, imtl_g_solve, imtl_l_step, mgda_solve, mgda_two_task_gamma,
    pcgrad_adjusted_gradients, pcgrad_project, uw_step, AggregationContext, GradVacState,
    ImtlLState, StrategyKind, StrategyParams, UwState, FW_GAP_TOL,
};
use crate::trainer::{
    noise_sample, stochastic_gradient_moments, train, OptimizerSpec, RunRecord, TrainConfig,
};

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    /// "<=" or ">=": how the statistic must relate to the threshold.
    pub comparison: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn le(name: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        CheckReport {
            name: name.to_string(),
            statistic,
            threshold,
            comparison: "<=",
            passed: statistic <= threshold,
            detail,
        }
    }

    fn ge(name: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        CheckReport {
            name: name.to_string(),
            statistic,
            threshold,
            comparison: ">=",
            passed: statistic >= threshold,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {:.6e} {} {:.6e}  ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.comparison,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Invariants,
    Theorem1,
    Rate,
    Noise,
    Escape,
    Parity,
    All,
}

impl Suite {
    pub const NAMES: [(&'static str, Suite); 7] = [
        ("invariants", Suite::Invariants),
        ("theorem1", Suite::Theorem1),
        ("rate", Suite::Rate),
        ("noise", Suite::Noise),
        ("escape", Suite::Escape),
        ("parity", Suite::Parity),
        ("all", Suite::All),
    ];
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::NAMES
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, suite)| *suite)
            .ok_or_else(|| {
                format!(
                    "unknown suite {s:?}; expected one of invariants, theorem1, rate, noise, escape, parity, all"
                )
            })
    }
}

// ---------------------------------------------------------------------------
// Pinned defaults.

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexDefaults {
    pub seed: u64,
    pub tasks: usize,
    pub samples: usize,
    pub sum_tol: f64,
    pub mean_sigmas: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientUnbiasedDefaults {
    pub dataset_seed: u64,
    pub sample_seed: u64,
    pub samples: usize,
    pub batch_size: usize,
    pub sigmas: f64,
    pub quadratic: QuadraticSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Defaults {
    pub dataset_seed: u64,
    pub run_seed_base: u64,
    pub kappa_seed: u64,
    pub seeds: usize,
    pub iterations: u64,
    pub log_stride: u64,
    pub batch_size: usize,
    pub eta: f64,
    pub kappa_draws: usize,
    pub excess_sigmas: f64,
    pub plateau_slack: f64,
    pub quadratic: QuadraticSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDefaults {
    pub dataset_seed: u64,
    pub run_seed_base: u64,
    pub seeds: usize,
    pub iterations: u64,
    pub log_stride: u64,
    pub batch_size: usize,
    pub alpha_step: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub quadratic: QuadraticSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDefaults {
    pub dataset_seed: u64,
    pub sample_seed: u64,
    pub draws: usize,
    pub batch_size: usize,
    pub margin_sigmas: f64,
    pub quadratic: QuadraticSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeDefaults {
    pub dataset_seed: u64,
    pub seed_base: u64,
    pub seeds: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub eta: f64,
    pub ew_min: f64,
    pub ew_max: f64,
    pub landscape: LandscapeSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDefaults {
    pub seed: u64,
    pub pairs: usize,
    pub dim: usize,
    pub gamma_tol: f64,
    pub gap_instances_per_t: usize,
    pub gap_dim: usize,
    pub gap_tol: f64,
    pub projection_instances: usize,
    pub projection_tol: f64,
    pub equivalence_instances: usize,
    pub equivalence_tol: f64,
    pub nonconflict_tol: f64,
    pub stationary_losses: Vec<f64>,
    pub stationary_iters: usize,
    pub stationary_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaPDefaults {
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityDefaults {
    pub dataset_seed: u64,
    pub seed_base: u64,
    pub seeds: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub adam_eta: f64,
    pub tolerance: f64,
    pub distributions: Vec<String>,
    pub toy_mlp: ToyMlpSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminismDefaults {
    pub seed: u64,
    pub fd_points: usize,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub fd_batch_size: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyDefaults {
    pub simplex: SimplexDefaults,
    pub gradient_unbiased: GradientUnbiasedDefaults,
    pub theorem1: Theorem1Defaults,
    pub rate: RateDefaults,
    pub noise: NoiseDefaults,
    pub escape: EscapeDefaults,
    pub oracles: OracleDefaults,
    pub delta_p: DeltaPDefaults,
    pub parity: ParityDefaults,
    pub determinism: DeterminismDefaults,
}

static DEFAULTS_JSON: &str = include_str!("../defaults/verify_defaults.json");
static DEFAULTS: OnceLock<VerifyDefaults> = OnceLock::new();

pub fn defaults() -> &'static VerifyDefaults {
    DEFAULTS
        .get_or_init(|| serde_json::from_str(DEFAULTS_JSON).expect("verify_defaults.json is valid"))
}

// ---------------------------------------------------------------------------
// Suite runner.

pub fn run_suite(suite: Suite) -> Vec<CheckReport> {
    match suite {
        Suite::Invariants => {
            let mut reports = check_simplex_and_means();
            reports.push(check_gradient_unbiasedness());
            reports.extend(check_strategy_oracles());
            reports.extend(check_delta_p());
            reports.extend(check_determinism_and_gradients());
            reports
        }
        Suite::Theorem1 => check_theorem1(),
        Suite::Rate => vec![check_rate()],
        Suite::Noise => vec![check_noise_ordering()],
        Suite::Escape => check_escape(),
        Suite::Parity => check_parity(),
        Suite::All => {
            let mut reports = run_suite(Suite::Invariants);
            reports.extend(run_suite(Suite::Theorem1));
            reports.extend(run_suite(Suite::Rate));
            reports.extend(run_suite(Suite::Noise));
            reports.extend(run_suite(Suite::Escape));
            reports.extend(run_suite(Suite::Parity));
            reports
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 1: simplex membership and mean uniformity of the samplers.

pub fn check_simplex_and_means() -> Vec<CheckReport> {
    let cfg = &defaults().simplex;
    let t = cfg.tasks;
    let mut reports = Vec::new();
    for dist in WeightDistribution::ALL {
        let mut rng = RngStream::new(cfg.seed, STREAM_WEIGHTS);
        let mut worst = 0.0f64;
        let mut sum = vec![0.0; t];
        let mut sum_sq = vec![0.0; t];
        for _ in 0..cfg.samples {
            let w = sample_weights(dist, t, &mut rng).expect("sampling");
            let total: f64 = w.weights().iter().sum();
            worst = worst.max((total - 1.0).abs());
            for (k, &x) in w.weights().iter().enumerate() {
                worst = worst.max(-x.min(0.0));
                sum[k] += x;
                sum_sq[k] += x * x;
            }
        }
        reports.push(CheckReport::le(
            &format!("simplex_{dist}"),
            worst,
            cfg.sum_tol,
            format!(
                "{} samples at T={t}: max of |Σλ−1| and negativity",
                cfg.samples
            ),
        ));
        if dist.has_uniform_mean() {
            let mut max_sigmas = 0.0f64;
            for k in 0..t {
                let mean = sum[k] / cfg.samples as f64;
                let var = (sum_sq[k] / cfg.samples as f64 - mean * mean).max(0.0);
                let se = (var / cfg.samples as f64).sqrt().max(1e-15);
                max_sigmas = max_sigmas.max((mean - 1.0 / t as f64).abs() / se);
            }
            reports.push(CheckReport::le(
                &format!("mean_uniform_{dist}"),
                max_sigmas,
                cfg.mean_sigmas,
                "max per-coordinate |mean − 1/T| in Monte-Carlo SEs".to_string(),
            ));
        }
    }
    reports
}

// ---------------------------------------------------------------------------
// Criterion 2: the doubly stochastic aggregated gradient is unbiased.

pub fn check_gradient_unbiasedness() -> CheckReport {
    let cfg = &defaults().gradient_unbiased;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let family = QuadraticTaskFamily::generate(cfg.quadratic.clone(), &mut rng).expect("family");
    let params = Params {
        shared: vec![0.0; cfg.quadratic.dim],
        task: vec![Vec::new(); cfg.quadratic.tasks],
    };
    let (mean, var, full) = stochastic_gradient_moments(
        &family,
        WeightDistribution::Normal,
        &params,
        cfg.batch_size,
        cfg.samples,
        cfg.sample_seed,
    );
    let mut max_sigmas = 0.0f64;
    for j in 0..mean.len() {
        let se = (var[j] / cfg.samples as f64).sqrt().max(1e-15);
        max_sigmas = max_sigmas.max((mean[j] - full[j]).abs() / se);
    }
    CheckReport::le(
        "unbiased_gradient",
        max_sigmas,
        cfg.sigmas,
        format!(
            "{} doubly stochastic draws vs the full uniform gradient, worst coordinate in SEs",
            cfg.samples
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 3: fixed-step convergence stays under the bound.

pub fn check_theorem1() -> Vec<CheckReport> {
    let cfg = &defaults().theorem1;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let family = QuadraticTaskFamily::generate(cfg.quadratic.clone(), &mut rng).expect("family");
    let kappa = estimate_kappa(&family, cfg.batch_size, cfg.kappa_draws, cfg.kappa_seed);
    let runs: Vec<RunRecord> = (0..cfg.seeds)
        .map(|i| {
            let config = TrainConfig {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                seed: cfg.run_seed_base + i as u64,
                log_stride: cfg.log_stride,
                strategy: StrategyKind::Rlw,
                strategy_params: StrategyParams::default(),
                distribution: Some(WeightDistribution::Normal),
                optimizer: OptimizerSpec::SgdFixed { eta: cfg.eta },
            };
            train(&family, &config).expect("theorem1 run")
        })
        .collect();
    let report = theorem1_check(&runs, &family, cfg.eta, kappa).expect("theorem1 check");
    vec![
        CheckReport::le(
            "theorem1_bound",
            report.max_excess_sigmas,
            cfg.excess_sigmas,
            format!(
                "max over k of (seed-mean − bound)/SE; κ={kappa:.3}, c={}, max ratio {:.3}",
                report.c, report.max_violation_ratio
            ),
        ),
        CheckReport::le(
            "theorem1_plateau",
            report.plateau,
            report.plateau_bound * cfg.plateau_slack,
            format!(
                "terminal seed-mean distance² vs ηκ/2c = {:.4} with slack {}",
                report.plateau_bound, cfg.plateau_slack
            ),
        ),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 4: decreasing-step runs decay like 1/k.

pub fn check_rate() -> CheckReport {
    let cfg = &defaults().rate;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let family = QuadraticTaskFamily::generate(cfg.quadratic.clone(), &mut rng).expect("family");
    let c = family.min_curvature();
    assert!(
        cfg.alpha_step > 1.0 / (2.0 * c),
        "rate check needs alpha > 1/(2c)"
    );
    let runs: Vec<RunRecord> = (0..cfg.seeds)
        .map(|i| {
            let config = TrainConfig {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                seed: cfg.run_seed_base + i as u64,
                log_stride: cfg.log_stride,
                strategy: StrategyKind::Rlw,
                strategy_params: StrategyParams::default(),
                distribution: Some(WeightDistribution::Normal),
                optimizer: OptimizerSpec::SgdDecreasing {
                    alpha_step: cfg.alpha_step,
                },
            };
            train(&family, &config).expect("rate run")
        })
        .collect();
    let slope = rate_fit(&runs).expect("rate fit");
    let passed = slope >= cfg.slope_min && slope <= cfg.slope_max;
    CheckReport {
        name: "rate_slope".to_string(),
        statistic: slope,
        threshold: cfg.slope_max,
        comparison: "<=",
        passed,
        detail: format!(
            "log-log slope over the last decade must lie in [{}, {}]",
            cfg.slope_min, cfg.slope_max
        ),
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: weight sampling adds noise on top of batch noise.

pub fn check_noise_ordering() -> CheckReport {
    let cfg = &defaults().noise;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let family = QuadraticTaskFamily::generate(cfg.quadratic.clone(), &mut rng).expect("family");
    let tasks = family.tasks();
    let theta_star = family
        .optimum(&vec![1.0 / tasks as f64; tasks])
        .expect("closed-form optimum");
    let params = Params {
        shared: theta_star,
        task: vec![Vec::new(); tasks],
    };
    // Paired comparison: the same seed gives both estimators the same batch
    // sequence, so the difference isolates the weight-sampling noise.
    let fw = noise_sample(
        &family,
        None,
        &params,
        cfg.batch_size,
        cfg.draws,
        cfg.sample_seed,
    );
    let rlw = noise_sample(
        &family,
        Some(WeightDistribution::Normal),
        &params,
        cfg.batch_size,
        cfg.draws,
        cfg.sample_seed,
    );
    let diffs: Vec<f64> = rlw.iter().zip(&fw).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt().max(1e-300);
    CheckReport::ge(
        "noise_ordering",
        mean / se,
        cfg.margin_sigmas,
        format!(
            "paired mean(‖ξ_rlw‖² − ‖ξ_fw‖²) = {mean:.4e} over {} draws, in SEs",
            cfg.draws
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: random weighting escapes the sharp minimum at least as often.

pub fn check_escape() -> Vec<CheckReport> {
    let cfg = &defaults().escape;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let problem = LandscapeProblem::generate(cfg.landscape.clone(), &mut rng).expect("landscape");
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| cfg.seed_base + i as u64).collect();
    let optimizer = OptimizerSpec::SgdFixed { eta: cfg.eta };
    let ew = escape_frequency(
        &problem,
        StrategyKind::Ew,
        None,
        &optimizer,
        cfg.iterations,
        cfg.batch_size,
        &seeds,
    )
    .expect("ew escape runs");
    let rlw = escape_frequency(
        &problem,
        StrategyKind::Rlw,
        Some(WeightDistribution::Normal),
        &optimizer,
        cfg.iterations,
        cfg.batch_size,
        &seeds,
    )
    .expect("rlw escape runs");

    let in_range = ew > cfg.ew_min && ew < cfg.ew_max;
    let tie_ok = rlw == ew && (ew == 0.0 || ew == 1.0);
    vec![
        CheckReport {
            name: "escape_ew_in_range".to_string(),
            statistic: ew,
            threshold: cfg.ew_min,
            comparison: ">=",
            passed: in_range,
            detail: format!(
                "equal-weighting escape fraction must fall inside ({}, {})",
                cfg.ew_min, cfg.ew_max
            ),
        },
        CheckReport {
            name: "escape_rlw_ge_ew".to_string(),
            statistic: rlw - ew,
            threshold: 0.0,
            comparison: ">=",
            passed: rlw > ew || tie_ok,
            detail: format!(
                "rlw(normal) {rlw:.3} vs ew {ew:.3} over {} seeds with shared data streams",
                cfg.seeds
            ),
        },
    ]
}

// ---------------------------------------------------------------------------
// Criterion 7: strategy oracles.

fn random_grads(t: usize, d: usize, rng: &mut RngStream) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();
    Matrix::from_rows(&rows)
}

pub fn check_strategy_oracles() -> Vec<CheckReport> {
    let cfg = &defaults().oracles;
    let mut reports = Vec::new();
    let mut rng = RngStream::new(cfg.seed, STREAM_WEIGHTS);

    // pcgrad: projected gradients lose their pairwise conflicts.
    let mut worst_dot = f64::INFINITY;
    let mut found = 0;
    while found < cfg.pairs {
        let grads = random_grads(2, cfg.dim, &mut rng);
        if dot(grads.row(0), grads.row(1)) >= 0.0 {
            continue;
        }
        found += 1;
        let losses = [1.0, 1.0];
        let sign = vec![1.0; cfg.dim];
        let ctx = AggregationContext {
            losses: &losses,
            grads: &grads,
            shared_param_sign: &sign,
            iteration: 0,
        };
        let mut step_rng = RngStream::new(rng.next_u64(), STREAM_WEIGHTS);
        let adjusted = pcgrad_adjusted_gradients(&ctx, &mut step_rng);
        worst_dot = worst_dot
            .min(dot(&adjusted[0], grads.row(1)))
            .min(dot(&adjusted[1], grads.row(0)));
    }
    reports.push(CheckReport::ge(
        "pcgrad_nonconflict",
        worst_dot,
        -cfg.nonconflict_tol,
        format!(
            "worst post-projection pairwise dot over {} conflicting pairs",
            cfg.pairs
        ),
    ));

    // mgda: two-task closed form and duality gap.
    let mut max_gamma_err = 0.0f64;
    for _ in 0..cfg.pairs {
        let grads = random_grads(2, cfg.dim, &mut rng);
        let gamma = mgda_two_task_gamma(grads.row(0), grads.row(1));
        let losses = [1.0, 1.0];
        let sign = vec![1.0; cfg.dim];
        let ctx = AggregationContext {
            losses: &losses,
            grads: &grads,
            shared_param_sign: &sign,
            iteration: 0,
        };
        let result = mgda_solve(&ctx);
        max_gamma_err = max_gamma_err.max((result.effective_weights.unwrap()[0] - gamma).abs());
    }
    reports.push(CheckReport::le(
        "mgda_two_task_gamma",
        max_gamma_err,
        cfg.gamma_tol,
        format!("max |λ₁ − γ*| over {} random pairs", cfg.pairs),
    ));

    let mut max_gap = 0.0f64;
    for t in 2..=5usize {
        for _ in 0..cfg.gap_instances_per_t {
            let grads = random_grads(t, cfg.gap_dim, &mut rng);
            let losses = vec![1.0; t];
            let sign = vec![1.0; cfg.gap_dim];
            let ctx = AggregationContext {
                losses: &losses,
                grads: &grads,
                shared_param_sign: &sign,
                iteration: 0,
            };
            let result = mgda_solve(&ctx);
            max_gap = max_gap.max(result.diagnostics["duality_gap"]);
        }
    }
    assert!(cfg.gap_tol >= FW_GAP_TOL);
    reports.push(CheckReport::le(
        "mgda_duality_gap",
        max_gap,
        cfg.gap_tol,
        format!("max Frank-Wolfe gap over T=2..5 at d={}", cfg.gap_dim),
    ));

    // imtl_g: equal projections onto every unit gradient.
    let mut max_spread = 0.0f64;
    for t in 2..=5usize {
        for _ in 0..cfg.projection_instances {
            let grads = random_grads(t, cfg.gap_dim, &mut rng);
            let losses = vec![1.0; t];
            let sign = vec![1.0; cfg.gap_dim];
            let ctx = AggregationContext {
                losses: &losses,
                grads: &grads,
                shared_param_sign: &sign,
                iteration: 0,
            };
            let result = imtl_g_solve(&ctx);
            let projections: Vec<f64> = (0..t)
                .map(|i| {
                    let u = scaled(grads.row(i), 1.0 / norm(grads.row(i)));
                    dot(&result.shared_gradient, &u)
                })
                .collect();
            for p in &projections {
                max_spread = max_spread.max((p - projections[0]).abs());
            }
        }
    }
    reports.push(CheckReport::le(
        "imtl_g_equal_projection",
        max_spread,
        cfg.projection_tol,
        "max |g·u_i − g·u_j| over random well-conditioned instances".to_string(),
    ));

    // gradvac(φ̂=0, β=0) reproduces pcgrad on a shared rng sequence.
    let mut max_rel_diff = 0.0f64;
    for _ in 0..cfg.equivalence_instances {
        let grads = random_grads(3, cfg.dim, &mut rng);
        let losses = vec![1.0; 3];
        let sign = vec![1.0; cfg.dim];
        let ctx = AggregationContext {
            losses: &losses,
            grads: &grads,
            shared_param_sign: &sign,
            iteration: 0,
        };
        let seed = rng.next_u64();
        let mut rng_a = RngStream::new(seed, STREAM_WEIGHTS);
        let mut rng_b = RngStream::new(seed, STREAM_WEIGHTS);
        let pc = pcgrad_project(&ctx, &mut rng_a);
        let mut state = GradVacState::new(3, 0.0);
        let gv = gradvac_adjust(&ctx, &mut state, &mut rng_b);
        let denom = norm(&pc.shared_gradient).max(1e-12);
        let diff: f64 = pc
            .shared_gradient
            .iter()
            .zip(&gv.shared_gradient)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        max_rel_diff = max_rel_diff.max(diff / denom);
    }
    reports.push(CheckReport::le(
        "gradvac_zero_state_equals_pcgrad",
        max_rel_diff,
        cfg.equivalence_tol,
        "relative aggregate difference on shared rng sequences".to_string(),
    ));

    // graddrop with full leak is exactly the unmasked sum.
    let mut max_leak_diff = 0.0f64;
    for _ in 0..cfg.equivalence_instances {
        let grads = random_grads(3, cfg.dim, &mut rng);
        let losses = vec![1.0; 3];
        let sign: Vec<f64> = (0..cfg.dim)
            .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let ctx = AggregationContext {
            losses: &losses,
            grads: &grads,
            shared_param_sign: &sign,
            iteration: 0,
        };
        let mut step_rng = RngStream::new(rng.next_u64(), STREAM_WEIGHTS);
        let result = crate::strategies::graddrop_mask(&ctx, &[1.0, 1.0, 1.0], &mut step_rng);
        for j in 0..cfg.dim {
            let plain: f64 = (0..3).map(|i| grads.get(i, j)).sum();
            max_leak_diff = max_leak_diff.max((result.shared_gradient[j] - plain).abs());
        }
    }
    reports.push(CheckReport::le(
        "graddrop_full_leak_identity",
        max_leak_diff,
        0.0,
        "leak = 1 must reproduce the plain gradient sum exactly".to_string(),
    ));

    // uw and imtl_l converge to their closed-form stationary weights on
    // frozen losses.
    let losses = cfg.stationary_losses.clone();
    let t = losses.len();
    let unit_rows: Vec<Vec<f64>> = vec![vec![1.0]; t];
    let grads = Matrix::from_rows(&unit_rows);
    let sign = [1.0];
    let ctx = AggregationContext {
        losses: &losses,
        grads: &grads,
        shared_param_sign: &sign,
        iteration: 0,
    };
    let mut uw = UwState::new(t, crate::strategies::DEFAULT_INNER_LR);
    for _ in 0..cfg.stationary_iters {
        uw_step(&ctx, &mut uw);
    }
    let max_uw_err = uw
        .weights()
        .iter()
        .zip(&losses)
        .map(|(w, l)| (w - 1.0 / (2.0 * l)).abs())
        .fold(0.0f64, f64::max);
    reports.push(CheckReport::le(
        "uw_stationary_weights",
        max_uw_err,
        cfg.stationary_tol,
        "frozen-loss iteration must reach λ_t = 1/(2ℓ_t)".to_string(),
    ));

    let mut imtl = ImtlLState::new(t, crate::strategies::DEFAULT_INNER_LR);
    for _ in 0..cfg.stationary_iters {
        imtl_l_step(&ctx, &mut imtl);
    }
    let max_imtl_err = imtl
        .weights()
        .iter()
        .zip(&losses)
        .map(|(w, l)| (w - 1.0 / l).abs())
        .fold(0.0f64, f64::max);
    reports.push(CheckReport::le(
        "imtl_l_stationary_weights",
        max_imtl_err,
        cfg.stationary_tol,
        "frozen-loss iteration must reach λ_t = 1/ℓ_t".to_string(),
    ));

    reports
}

// ---------------------------------------------------------------------------
// Criterion 8: Δ_p correctness.

pub fn check_delta_p() -> Vec<CheckReport> {
    let cfg = &defaults().delta_p;
    let spec = MetricSpec {
        per_task: vec![
            vec![MetricDirection::HigherIsBetter],
            vec![MetricDirection::LowerIsBetter],
        ],
    };
    let baseline = MethodResults {
        values: vec![vec![100.0], vec![100.0]],
    };
    let self_dp = delta_p(&baseline, &baseline, &spec).expect("delta_p");
    let mut reports = vec![CheckReport::le(
        "delta_p_self_is_zero",
        self_dp.abs(),
        0.0,
        "a method compared against itself must score exactly +0.00".to_string(),
    )];

    // Task 1 higher-better 105 vs 100 (+5%), task 2 lower-better 90 vs 100
    // (+10%): Δ_p = ½(5 + 10) = 7.5.
    let method = MethodResults {
        values: vec![vec![105.0], vec![90.0]],
    };
    let dp = delta_p(&method, &baseline, &spec).expect("delta_p");
    reports.push(CheckReport::le(
        "delta_p_hand_example",
        (dp - 7.5).abs(),
        cfg.tol,
        "two-task mixed-direction example must equal +7.5%".to_string(),
    ));
    reports
}

// ---------------------------------------------------------------------------
// Criterion 9: random weighting converges on par with equal weighting.

pub fn check_parity() -> Vec<CheckReport> {
    let cfg = &defaults().parity;
    let mut rng = RngStream::new(cfg.dataset_seed, STREAM_DATASET);
    let problem = ToyMlpProblem::generate(cfg.toy_mlp.clone(), &mut rng).expect("toy mlp");

    let mean_final = |strategy: StrategyKind, dist: Option<WeightDistribution>| -> f64 {
        let mut total = 0.0;
        for i in 0..cfg.seeds {
            let config = TrainConfig {
                iterations: cfg.iterations,
                batch_size: cfg.batch_size,
                seed: cfg.seed_base + i as u64,
                log_stride: cfg.iterations,
                strategy,
                strategy_params: StrategyParams::default(),
                distribution: dist,
                optimizer: OptimizerSpec::Adam {
                    eta: cfg.adam_eta,
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
            };
            total += train(&problem, &config)
                .expect("parity run")
                .mean_final_loss();
        }
        total / cfg.seeds as f64
    };

    let ew_loss = mean_final(StrategyKind::Ew, None);
    cfg.distributions
        .iter()
        .map(|name| {
            let dist: WeightDistribution = name.parse().expect("distribution name");
            let rlw_loss = mean_final(StrategyKind::Rlw, Some(dist));
            CheckReport::le(
                &format!("parity_rlw_{name}"),
                (rlw_loss - ew_loss).abs() / ew_loss,
                cfg.tolerance,
                format!(
                    "final mean loss {rlw_loss:.5} vs ew {ew_loss:.5} over {} seeds",
                    cfg.seeds
                ),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism and finite-difference gradient checks.

fn fd_max_rel_err(
    problem: &dyn MultiTaskProblem,
    points: usize,
    step: f64,
    batch_size: usize,
    seed: u64,
) -> f64 {
    let mut init_rng = RngStream::new(seed, STREAM_INIT);
    let mut data_rng = RngStream::new(seed, STREAM_DATA);
    let mut point_rng = RngStream::new(seed.wrapping_add(1), STREAM_INIT);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let mut params = problem.init_params(&mut init_rng);
        for v in params.shared.iter_mut() {
            *v += point_rng.normal();
        }
        for task in params.task.iter_mut() {
            for v in task.iter_mut() {
                *v += point_rng.normal();
            }
        }
        let batch = sample_batch(
            problem.samples_per_task(),
            problem.tasks(),
            batch_size,
            &mut data_rng,
        );
        let eval = problem.evaluate_batch(&params, &batch);
        // One random coordinate per parameter block per point keeps 100
        // points affordable for every family.
        for t in 0..problem.tasks() {
            let j = point_rng.index(problem.shared_dim());
            let mut plus = params.clone();
            plus.shared[j] += step;
            let mut minus = params.clone();
            minus.shared[j] -= step;
            let fd = (problem.evaluate_batch(&plus, &batch).losses[t]
                - problem.evaluate_batch(&minus, &batch).losses[t])
                / (2.0 * step);
            let analytic = eval.shared_grads.get(t, j);
            worst = worst.max((analytic - fd).abs() / analytic.abs().max(1.0));
            if problem.task_dim(t) > 0 {
                let j = point_rng.index(problem.task_dim(t));
                let mut plus = params.clone();
                plus.task[t][j] += step;
                let mut minus = params.clone();
                minus.task[t][j] -= step;
                let fd = (problem.evaluate_batch(&plus, &batch).losses[t]
                    - problem.evaluate_batch(&minus, &batch).losses[t])
                    / (2.0 * step);
                let analytic = eval.task_grads[t][j];
                worst = worst.max((analytic - fd).abs() / analytic.abs().max(1.0));
            }
        }
    }
    worst
}

pub fn check_determinism_and_gradients() -> Vec<CheckReport> {
    let cfg = &defaults().determinism;
    let mut reports = Vec::new();

    // Byte-identical logs for identical seeds, one run per family.
    let quadratic_spec = defaults().gradient_unbiased.quadratic.clone();
    let mlp_spec = defaults().parity.toy_mlp.clone();
    let landscape_spec = defaults().escape.landscape.clone();
    let mut mismatches = 0usize;
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let family = QuadraticTaskFamily::generate(quadratic_spec, &mut rng).expect("family");
        let config = TrainConfig {
            iterations: 200,
            batch_size: cfg.fd_batch_size,
            seed: cfg.seed,
            log_stride: 10,
            strategy: StrategyKind::Rlw,
            strategy_params: StrategyParams::default(),
            distribution: Some(WeightDistribution::Normal),
            optimizer: OptimizerSpec::SgdFixed { eta: 0.05 },
        };
        let a = train(&family, &config).expect("run").to_csv();
        let b = train(&family, &config).expect("run").to_csv();
        if a != b {
            mismatches += 1;
        }
    }
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let problem = ToyMlpProblem::generate(mlp_spec.clone(), &mut rng).expect("mlp");
        let config = TrainConfig {
            iterations: 100,
            batch_size: cfg.fd_batch_size,
            seed: cfg.seed,
            log_stride: 10,
            strategy: StrategyKind::Rlw,
            strategy_params: StrategyParams::default(),
            distribution: Some(WeightDistribution::Dirichlet),
            optimizer: OptimizerSpec::Adam {
                eta: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
        };
        let a = train(&problem, &config).expect("run").to_csv();
        let b = train(&problem, &config).expect("run").to_csv();
        if a != b {
            mismatches += 1;
        }
    }
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let problem = LandscapeProblem::generate(landscape_spec, &mut rng).expect("landscape");
        let config = TrainConfig {
            iterations: 200,
            batch_size: cfg.fd_batch_size,
            seed: cfg.seed,
            log_stride: 10,
            strategy: StrategyKind::Ew,
            strategy_params: StrategyParams::default(),
            distribution: None,
            optimizer: OptimizerSpec::SgdFixed { eta: 0.02 },
        };
        let a = train(&problem, &config).expect("run").to_csv();
        let b = train(&problem, &config).expect("run").to_csv();
        if a != b {
            mismatches += 1;
        }
    }
    reports.push(CheckReport::le(
        "csv_determinism",
        mismatches as f64,
        0.0,
        "identical seeds must produce byte-identical csv logs across 3 families".to_string(),
    ));

    // Finite-difference oracles per family.
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let family =
            QuadraticTaskFamily::generate(defaults().gradient_unbiased.quadratic.clone(), &mut rng)
                .expect("family");
        reports.push(CheckReport::le(
            "fd_quadratic",
            fd_max_rel_err(
                &family,
                cfg.fd_points,
                cfg.fd_step,
                cfg.fd_batch_size,
                cfg.seed,
            ),
            cfg.fd_tol,
            format!(
                "max relative gradient error at {} random points",
                cfg.fd_points
            ),
        ));
    }
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let problem = ToyMlpProblem::generate(mlp_spec, &mut rng).expect("mlp");
        reports.push(CheckReport::le(
            "fd_toy_mlp",
            fd_max_rel_err(
                &problem,
                cfg.fd_points,
                cfg.fd_step,
                cfg.fd_batch_size,
                cfg.seed,
            ),
            cfg.fd_tol,
            format!(
                "max relative gradient error at {} random points",
                cfg.fd_points
            ),
        ));
    }
    {
        let mut rng = RngStream::new(cfg.seed, STREAM_DATASET);
        let problem = LandscapeProblem::generate(defaults().escape.landscape.clone(), &mut rng)
            .expect("landscape");
        reports.push(CheckReport::le(
            "fd_landscape",
            fd_max_rel_err(
                &problem,
                cfg.fd_points,
                cfg.fd_step,
                cfg.fd_batch_size,
                cfg.seed,
            ),
            cfg.fd_tol,
            format!(
                "max relative gradient error at {} random points",
                cfg.fd_points
            ),
        ));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let d = defaults();
        assert_eq!(d.simplex.samples, 100_000);
        assert!(d.theorem1.eta <= 0.5);
    }

    #[test]
    fn suite_names_parse() {
        for (name, suite) in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap(), suite);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
