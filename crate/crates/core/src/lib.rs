//! Matrix-completion toolkit for accelerating fault-injection testing of
//! automated vehicles.
//!
//! A fault space (fault value x injection time) crossed with a set of
//! concrete driving scenarios yields a three-way grid of safety indicators.
//! Only a sparse subset is simulated; the rest is predicted by a low-rank
//! factorization regularized for smoothness across neighbouring scenarios,
//! neighbouring injection times and along the fault-value axis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod sim;
pub mod space;
pub mod srmf;

pub use nalgebra;

pub use baselines::Baseline;
pub use config::{EvaluationConfig, ExperimentConfig, SimulatorConfig};
pub use data::{Cell, SafetyMatrix, SamplingMask, SamplingPlan};
pub use error::{Error, Result};
pub use eval::{EvalMode, EvaluationReport, MetricBlock, ModelReport, Timing};
pub use pipeline::{run_pipeline, run_sweep, SweepParameter, SweepRow};
pub use sim::{EpisodeResult, GroundTruth, IdmParameters, SimulationParameters};
pub use space::{Dims, ScenarioKind, SpaceConfig, TestSpace};
pub use srmf::{fit, FactorModel, Hyperparameters};
