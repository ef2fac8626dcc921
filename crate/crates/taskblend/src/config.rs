//! Experiment configuration files (JSON) and sweep manifests. Schemas are
//! strict: unknown keys are rejected everywhere, and validation runs before
//! any output file is created.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{
    Dataset, LandscapeProblem, LandscapeSpec, MultiTaskProblem, ProblemError, QuadraticSpec,
    QuadraticTaskFamily, ToyMlpProblem, ToyMlpSpec,
};
use crate::rng::{RngStream, STREAM_DATASET};
use crate::sampling::WeightDistribution;
use crate::strategies::{StrategyKind, StrategyParams};
use crate::trainer::{OptimizerSpec, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn invalid(field: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemFamily {
    Quadratic,
    ToyMlp,
    Landscape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: ProblemFamily,
    pub batch_size: usize,
    /// Seed for dataset generation; defaults to the run seed, so pin it when
    /// several seeds must share one dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_seed: Option<u64>,
    /// Path to a dumped dataset CSV to load instead of generating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy_mlp: Option<ToyMlpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeSpec>,
}

impl ProblemConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(invalid("problem.batch_size", "must be at least 1"));
        }
        let (want, found) = match self.family {
            ProblemFamily::Quadratic => ("quadratic", self.quadratic.is_some()),
            ProblemFamily::ToyMlp => ("toy_mlp", self.toy_mlp.is_some()),
            ProblemFamily::Landscape => ("landscape", self.landscape.is_some()),
        };
        if !found {
            return Err(invalid(
                &format!("problem.{want}"),
                "family parameters are missing",
            ));
        }
        let extras = [
            (
                "quadratic",
                self.quadratic.is_some(),
                ProblemFamily::Quadratic,
            ),
            ("toy_mlp", self.toy_mlp.is_some(), ProblemFamily::ToyMlp),
            (
                "landscape",
                self.landscape.is_some(),
                ProblemFamily::Landscape,
            ),
        ];
        for (name, present, family) in extras {
            if present && family != self.family {
                return Err(invalid(
                    &format!("problem.{name}"),
                    "parameters do not match problem.family",
                ));
            }
        }
        Ok(())
    }

    /// Builds the problem, generating data from the dataset stream of
    /// `dataset_seed` (or `run_seed`), or loading the pinned CSV.
    pub fn build(&self, run_seed: u64) -> Result<Box<dyn MultiTaskProblem>, ConfigError> {
        self.validate()?;
        let seed = self.dataset_seed.unwrap_or(run_seed);
        let dataset = match &self.dataset_csv {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(Dataset::from_csv(&text)?)
            }
            None => None,
        };
        let mut rng = RngStream::new(seed, STREAM_DATASET);
        Ok(match self.family {
            ProblemFamily::Quadratic => {
                let spec = self.quadratic.clone().unwrap();
                match dataset {
                    Some(ds) => Box::new(QuadraticTaskFamily::with_dataset(spec, ds)?),
                    None => Box::new(QuadraticTaskFamily::generate(spec, &mut rng)?),
                }
            }
            ProblemFamily::ToyMlp => {
                let spec = self.toy_mlp.clone().unwrap();
                match dataset {
                    Some(ds) => Box::new(ToyMlpProblem::with_dataset(spec, ds)?),
                    None => Box::new(ToyMlpProblem::generate(spec, &mut rng)?),
                }
            }
            ProblemFamily::Landscape => {
                let spec = self.landscape.clone().unwrap();
                match dataset {
                    Some(ds) => Box::new(LandscapeProblem::with_dataset(spec, ds)?),
                    None => Box::new(LandscapeProblem::generate(spec, &mut rng)?),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// One of: ew, rlw, gradnorm, uw, mgda, dwa, pcgrad, graddrop, imtl_g,
    /// imtl_l, imtl, gradvac.
    pub kind: String,
    #[serde(default)]
    pub params: StrategyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    One(u64),
    Many(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::One(s) => vec![*s],
            SeedSpec::Many(v) => v.clone(),
        }
    }
}

fn default_log_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub seed: SeedSpec,
    #[serde(default = "default_log_stride")]
    pub log_stride: u64,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub strategy: StrategyConfig,
    /// Weight distribution, rlw only: uniform, normal, dirichlet,
    /// bernoulli, constrained_bernoulli, random_normal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
    pub optimizer: OptimizerSpec,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn strategy_kind(&self) -> Result<StrategyKind, ConfigError> {
        self.strategy
            .kind
            .parse()
            .map_err(|e| invalid("strategy.kind", e))
    }

    pub fn weight_distribution(&self) -> Result<Option<WeightDistribution>, ConfigError> {
        match &self.distribution {
            Some(name) => Ok(Some(name.parse().map_err(|e| invalid("distribution", e))?)),
            None => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate()?;
        let kind = self.strategy_kind()?;
        let dist = self.weight_distribution()?;
        if kind == StrategyKind::Rlw && dist.is_none() {
            return Err(invalid(
                "distribution",
                "strategy rlw requires a distribution",
            ));
        }
        if kind != StrategyKind::Rlw && dist.is_some() {
            return Err(invalid(
                "distribution",
                "only strategy rlw takes a distribution",
            ));
        }
        let tasks = match self.problem.family {
            ProblemFamily::Quadratic => self.problem.quadratic.as_ref().unwrap().tasks,
            ProblemFamily::ToyMlp => self.problem.toy_mlp.as_ref().unwrap().tasks,
            ProblemFamily::Landscape => 2,
        };
        self.strategy
            .params
            .validate(tasks)
            .map_err(|e| invalid("strategy.params", e))?;
        if self.run.log_stride == 0 {
            return Err(invalid("run.log_stride", "must be at least 1"));
        }
        if self.run.seed.seeds().is_empty() {
            return Err(invalid("run.seed", "seed list must not be empty"));
        }
        self.optimizer
            .validate()
            .map_err(|e| invalid("optimizer", e))?;
        Ok(())
    }

    /// The trainer-facing view of this config for one seed.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            iterations: self.run.iterations,
            batch_size: self.problem.batch_size,
            seed,
            log_stride: self.run.log_stride,
            strategy: self.strategy_kind()?,
            strategy_params: self.strategy.params.clone(),
            distribution: self.weight_distribution()?,
            optimizer: self.optimizer.clone(),
        })
    }
}

/// Cross-product sweep: strategies × distributions (rlw only) × seeds over
/// one base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub base: ExperimentConfig,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub distributions: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    /// Directory-friendly cell name, e.g. `rlw_normal_seed3`.
    pub name: String,
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
    pub seed: u64,
    #[serde(skip)]
    pub config: Option<ExperimentConfig>,
}

impl SweepManifest {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Expands into per-cell configs. Every cell is fully validated; the
    /// cell's output directory is `<base output_dir>/<cell name>`.
    pub fn expand(&self) -> Result<Vec<SweepCell>, ConfigError> {
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "empty axis"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "empty axis"));
        }
        let mut cells = Vec::new();
        for strategy in &self.strategies {
            let kind: StrategyKind = strategy.parse().map_err(|e| invalid("strategies", e))?;
            let dists: Vec<Option<String>> = if kind == StrategyKind::Rlw {
                if self.distributions.is_empty() {
                    return Err(invalid(
                        "distributions",
                        "rlw in the sweep requires a distributions axis",
                    ));
                }
                self.distributions.iter().map(|d| Some(d.clone())).collect()
            } else {
                vec![None]
            };
            for dist in dists {
                for &seed in &self.seeds {
                    let name = match &dist {
                        Some(d) => format!("{strategy}_{d}_seed{seed}"),
                        None => format!("{strategy}_seed{seed}"),
                    };
                    let mut config = self.base.clone();
                    config.strategy.kind = strategy.clone();
                    config.distribution = dist.clone();
                    config.run.seed = SeedSpec::One(seed);
                    config.run.output_dir = format!("{}/{}", self.base.run.output_dir, name);
                    config.validate()?;
                    cells.push(SweepCell {
                        name,
                        strategy: strategy.clone(),
                        distribution: dist.clone(),
                        seed,
                        config: Some(config),
                    });
                }
            }
        }
        Ok(cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config_json() -> String {
        r#"{
            "problem": {
                "family": "quadratic",
                "batch_size": 8,
                "quadratic": {
                    "tasks": 2,
                    "dim": 3,
                    "curvatures": [1.0, 2.0],
                    "centers": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                    "data_noise": 0.5,
                    "n_per_task": 32
                }
            },
            "strategy": { "kind": "ew" },
            "optimizer": { "kind": "sgd_fixed", "eta": 0.05 },
            "run": { "iterations": 50, "seed": 7, "log_stride": 5, "output_dir": "out" }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_and_builds() {
        let config = ExperimentConfig::from_json(&minimal_config_json()).unwrap();
        let problem = config.problem.build(7).unwrap();
        assert_eq!(problem.tasks(), 2);
        assert_eq!(problem.shared_dim(), 3);
        let tc = config.train_config(7).unwrap();
        assert_eq!(tc.strategy, StrategyKind::Ew);
    }

    #[test]
    fn config_round_trips_exactly() {
        let config = ExperimentConfig::from_json(&minimal_config_json()).unwrap();
        let json = config.to_json();
        let reparsed = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(reparsed, config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal_config_json().replace("\"strategy\"", "\"unknown_key\": 1, \"strategy\"");
        assert!(matches!(
            ExperimentConfig::from_json(&bad),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn unknown_strategy_error_names_the_field() {
        let bad = minimal_config_json().replace("\"kind\": \"ew\"", "\"kind\": \"foo\"");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("strategy.kind"), "message was {message:?}");
        assert!(message.contains("foo"));
    }

    #[test]
    fn rlw_requires_a_distribution() {
        let bad = minimal_config_json().replace("\"kind\": \"ew\"", "\"kind\": \"rlw\"");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("distribution"));
    }

    #[test]
    fn strategy_params_are_validated_against_the_problem() {
        // A 3-entry leak vector on a 2-task problem must be rejected at
        // config validation, before anything runs.
        let bad = minimal_config_json().replace(
            "\"strategy\": { \"kind\": \"ew\" },",
            "\"strategy\": { \"kind\": \"graddrop\", \"params\": { \"graddrop_leak\": [0.0, 0.0, 0.0] } },",
        );
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("strategy.params"), "message: {message}");
        assert!(message.contains("graddrop_leak"));
    }

    #[test]
    fn distribution_is_rlw_only() {
        let bad = minimal_config_json().replace(
            "\"strategy\": { \"kind\": \"ew\" },",
            "\"strategy\": { \"kind\": \"ew\" }, \"distribution\": \"normal\",",
        );
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("only strategy rlw"));
    }

    #[test]
    fn sweep_expansion_counts_cells() {
        let base = ExperimentConfig::from_json(&minimal_config_json()).unwrap();
        let manifest = SweepManifest {
            base,
            strategies: vec!["ew".into(), "rlw".into()],
            distributions: vec!["normal".into(), "dirichlet".into()],
            seeds: vec![0, 1, 2],
        };
        let cells = manifest.expand().unwrap();
        // ew × 3 seeds + rlw × 2 distributions × 3 seeds.
        assert_eq!(cells.len(), 3 + 6);
        assert_eq!(cells[0].name, "ew_seed0");
        assert!(cells.iter().any(|c| c.name == "rlw_dirichlet_seed2"));
    }

    #[test]
    fn empty_sweep_axes_are_rejected() {
        let base = ExperimentConfig::from_json(&minimal_config_json()).unwrap();
        let manifest = SweepManifest {
            base: base.clone(),
            strategies: vec![],
            distributions: vec![],
            seeds: vec![1],
        };
        assert!(manifest.expand().is_err());
        let manifest = SweepManifest {
            base,
            strategies: vec!["ew".into()],
            distributions: vec![],
            seeds: vec![],
        };
        assert!(manifest.expand().is_err());
    }

    #[test]
    fn dataset_seed_pins_the_dataset_across_run_seeds() {
        let mut config = ExperimentConfig::from_json(&minimal_config_json()).unwrap();
        config.problem.dataset_seed = Some(123);
        let a = config.problem.build(1).unwrap();
        let b = config.problem.build(2).unwrap();
        assert_eq!(a.dataset(), b.dataset());
    }
}
