//! Experiment configuration file (JSON).
//!
//! Sections may carry their own `seed`; a section without one inherits the
//! top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::Baseline;
use crate::data::SamplingPlan;
use crate::error::{Error, Result};
use crate::eval::{EvalMode, DEFAULT_RARE_THRESHOLD};
use crate::sim::{IdmParameters, SimulationParameters};
use crate::space::{SpaceConfig, TestSpace};
use crate::srmf::Hyperparameters;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub idm: IdmParameters,
    pub sim: SimulationParameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    #[serde(default)]
    pub mode: EvalMode,
    #[serde(default = "default_rare_threshold")]
    pub rare_threshold: f64,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    /// Positivity shift; defaults to `ttc_cap + 1`.
    #[serde(default)]
    pub shift: Option<f64>,
}

fn default_rare_threshold() -> f64 {
    DEFAULT_RARE_THRESHOLD
}

fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::Knn, Baseline::Mean]
}

fn default_knn_k() -> usize {
    5
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            mode: EvalMode::Untested,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            baselines: default_baselines(),
            knn_k: default_knn_k(),
            shift: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub space: SpaceConfig,
    pub simulator: SimulatorConfig,
    pub sampling: SamplingPlan,
    pub solver: Hyperparameters,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            space: SpaceConfig::default(),
            simulator: SimulatorConfig::default(),
            sampling: SamplingPlan::default(),
            solver: Hyperparameters::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let mut value: Value = serde_json::from_str(text)?;
        if let Some(seed) = value.get("seed").cloned() {
            for section in ["sampling", "solver"] {
                if let Some(Value::Object(map)) = value.get_mut(section) {
                    map.entry("seed").or_insert_with(|| seed.clone());
                }
            }
        }
        serde_json::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// The default configuration as JSON, with section seeds left to inherit
    /// the top-level seed.
    pub fn default_json() -> String {
        let mut value = serde_json::to_value(ExperimentConfig::default()).expect("serializes");
        for section in ["sampling", "solver"] {
            if let Some(Value::Object(map)) = value.get_mut(section) {
                map.remove("seed");
            }
        }
        serde_json::to_string_pretty(&value).expect("serializes")
    }

    /// Sets the top-level seed and both section seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sampling.seed = seed;
        self.solver.seed = seed;
    }

    pub fn shift(&self) -> f64 {
        self.evaluation
            .shift
            .unwrap_or(self.simulator.sim.ttc_cap + 1.0)
    }

    /// Validates every section and builds the test space.
    pub fn validate(&self) -> Result<TestSpace> {
        let space = TestSpace::build(&self.space)?;
        self.simulator.idm.validate()?;
        self.simulator.sim.validate()?;
        self.sampling.validate()?;
        self.solver.validate_for(space.dims())?;
        if !(self.evaluation.rare_threshold > 0.0 && self.evaluation.rare_threshold <= 1.0) {
            return Err(Error::config(
                "evaluation.rare_threshold",
                format!("must lie in (0, 1], got {}", self.evaluation.rare_threshold),
            ));
        }
        if self.evaluation.knn_k == 0 {
            return Err(Error::config("evaluation.knn_k", "must be at least 1"));
        }
        if !(self.shift() > 0.0) {
            return Err(Error::config(
                "evaluation.shift",
                format!("must be positive, got {}", self.shift()),
            ));
        }
        Ok(space)
    }
}
