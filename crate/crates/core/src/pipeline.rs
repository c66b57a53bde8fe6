//! End-to-end orchestration. The in-memory stage functions are pure given the
//! configuration; the `run_*` functions persist and reload artifacts so that
//! each stage can run on its own.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, Baseline};
use crate::config::ExperimentConfig;
use crate::data::{apply_sampling, build_sampling_mask, shift_to_positive, SafetyMatrix, SamplingMask};
use crate::error::{Error, Result};
use crate::eval::{self, EvaluationReport, Timing};
use crate::io;
use crate::sim::{simulate_full_space, GroundTruth};
use crate::space::TestSpace;
use crate::srmf::{FactorModel, Hyperparameters, Solver};

pub const SRMF_MODEL_NAME: &str = "srmf";

/// Scenario indices that open a new functional scenario.
pub fn scenario_breaks(space: &TestSpace) -> Vec<usize> {
    space
        .scenarios
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].functional_id != w[1].functional_id)
        .map(|(s, _)| s + 1)
        .collect()
}

pub fn simulate(config: &ExperimentConfig) -> Result<(TestSpace, GroundTruth)> {
    let space = config.validate()?;
    let truth = simulate_full_space(&space, &config.simulator.sim, &config.simulator.idm)?;
    Ok((space, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTiming {
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

impl CompletionTiming {
    pub fn model_seconds(&self) -> f64 {
        self.fit_seconds + self.predict_seconds
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub mask: SamplingMask,
    pub model: FactorModel,
    /// Prediction on the original (unshifted) scale.
    pub prediction: SafetyMatrix,
    pub timing: CompletionTiming,
}

/// Fits the factorization on already-built observations and predicts every
/// cell.
pub fn fit_and_predict(
    space: &TestSpace,
    truth: &SafetyMatrix,
    mask: &SamplingMask,
    hp: &Hyperparameters,
    shift: f64,
) -> Result<(FactorModel, SafetyMatrix, CompletionTiming)> {
    truth.check_same_dims(space.dims())?;
    let x_obs = shift_to_positive(&apply_sampling(truth, mask)?, mask, shift)?;
    let start = Instant::now();
    let mut solver = Solver::new(&x_obs, mask, hp)?;
    if hp.mask_cross_block_smoothness {
        solver = solver.with_scenario_breaks(&scenario_breaks(space));
    }
    let model = solver.run()?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let prediction = model.predict(shift);
    let predict_seconds = start.elapsed().as_secs_f64();
    Ok((
        model,
        prediction,
        CompletionTiming {
            fit_seconds,
            predict_seconds,
        },
    ))
}

/// Samples the observation set from `truth` and completes the matrix.
pub fn complete(config: &ExperimentConfig, space: &TestSpace, truth: &SafetyMatrix) -> Result<Completion> {
    let mask = build_sampling_mask(space, &config.sampling)?;
    let (model, prediction, timing) = fit_and_predict(space, truth, &mask, &config.solver, config.shift())?;
    Ok(Completion {
        mask,
        model,
        prediction,
        timing,
    })
}

/// Wall-clock inputs for the acceleration rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingInputs {
    pub simulation_seconds: f64,
    pub model_seconds: f64,
}

/// Scores the SRMF prediction and every configured baseline. Returns the
/// report and the baseline predictions.
pub fn evaluate(
    config: &ExperimentConfig,
    space: &TestSpace,
    truth: &SafetyMatrix,
    mask: &SamplingMask,
    prediction: &SafetyMatrix,
    timing: Option<TimingInputs>,
) -> Result<(EvaluationReport, Vec<(Baseline, SafetyMatrix)>)> {
    let dims = space.dims();
    truth.check_same_dims(dims)?;
    prediction.check_same_dims(dims)?;
    mask_dims(mask, dims)?;
    let ev = &config.evaluation;
    let eval_mask = eval::evaluation_cell_set(mask, ev.mode);
    if eval_mask.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut models = vec![eval::evaluate_model(
        SRMF_MODEL_NAME,
        prediction,
        truth,
        space,
        mask,
        &eval_mask,
        ev.rare_threshold,
    )?];
    let mut baseline_predictions = Vec::with_capacity(ev.baselines.len());
    for &b in &ev.baselines {
        let pred = baselines::predict_matrix(b, space, truth, mask, ev.knn_k)?;
        models.push(eval::evaluate_model(
            b.name(),
            &pred,
            truth,
            space,
            mask,
            &eval_mask,
            ev.rare_threshold,
        )?);
        baseline_predictions.push((b, pred));
    }
    let timing = match timing {
        Some(t) => {
            let untested = t.simulation_seconds * eval_mask.len() as f64 / dims.cell_count() as f64;
            Some(Timing {
                simulation_seconds: t.simulation_seconds,
                untested_simulation_seconds: untested,
                model_seconds: t.model_seconds,
                acceleration_rate: eval::acceleration_rate(untested, t.model_seconds)?,
            })
        }
        None => None,
    };
    let report = EvaluationReport {
        mode: ev.mode,
        rare_threshold: ev.rare_threshold,
        total_cells: dims.cell_count(),
        observed_cells: mask.len(),
        evaluated_cells: eval_mask.len(),
        models,
        timing,
    };
    Ok((report, baseline_predictions))
}

fn mask_dims(mask: &SamplingMask, dims: crate::space::Dims) -> Result<()> {
    if mask.dims != dims {
        return Err(Error::Dimension {
            expected: dims.to_string(),
            found: mask.dims.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Complete,
    Evaluate,
    Sweep,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Complete => "complete",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum StageState {
    Ok,
    Failed { error: String },
}

/// Contents of `status.json`: the last outcome of every stage run in the
/// output directory. A failed stage means artifacts it would have written may
/// be missing or stale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub stages: BTreeMap<Stage, StageState>,
}

impl RunStatus {
    pub fn load(out: &Path) -> Self {
        io::read_json(&out.join(io::STATUS_JSON)).unwrap_or_default()
    }

    pub fn failed(&self) -> bool {
        self.stages.values().any(|s| matches!(s, StageState::Failed { .. }))
    }
}

fn tracked<T>(out: &Path, stage: Stage, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let result = body().map_err(|e| e.in_stage(stage.name()));
    let mut status = RunStatus::load(out);
    let state = match &result {
        Ok(_) => StageState::Ok,
        Err(Error::Stage { source, .. }) => StageState::Failed {
            error: source.to_string(),
        },
        Err(e) => StageState::Failed { error: e.to_string() },
    };
    status.stages.insert(stage, state);
    // a status write failure must not mask the stage's own error
    if io::ensure_dir(out).is_ok() {
        let _ = io::write_json(&out.join(io::STATUS_JSON), &status);
    }
    result
}

/// Simulates the test space and writes `ground_truth.{csv,json}`.
pub fn run_simulate(config: &ExperimentConfig) -> Result<GroundTruth> {
    let out = &config.output_dir;
    tracked(out, Stage::Simulate, || {
        let (space, truth) = simulate(config)?;
        let meta = io::GroundTruthMeta {
            dims: space.dims(),
            space: config.space.clone(),
            simulator: config.simulator.clone(),
            timing: io::GroundTruthTiming {
                simulation_seconds: truth.seconds,
            },
        };
        io::write_ground_truth(out, &truth.matrix, &meta)?;
        Ok(truth)
    })
}

/// `completion.json`: fit diagnostics plus timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionMeta {
    pub shift: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub timing: CompletionTiming,
}

fn load_truth(out: &Path, space: &TestSpace) -> Result<(SafetyMatrix, io::GroundTruthMeta)> {
    let (truth, meta) = io::read_ground_truth(out)?;
    if meta.dims != space.dims() {
        return Err(Error::Dimension {
            expected: space.dims().to_string(),
            found: format!("{} in {}", meta.dims, out.join(io::GROUND_TRUTH_JSON).display()),
        });
    }
    Ok((truth, meta))
}

/// Reads the ground truth, samples, fits and writes the mask, model and
/// SRMF prediction.
pub fn run_complete(config: &ExperimentConfig) -> Result<Completion> {
    let out = &config.output_dir;
    tracked(out, Stage::Complete, || {
        let space = config.validate()?;
        let (truth, _) = load_truth(out, &space)?;
        let completion = complete(config, &space, &truth)?;
        io::write_mask(out, &completion.mask, &config.sampling)?;
        io::write_model(&out.join(io::MODEL_JSON), &completion.model)?;
        io::write_cells(&io::prediction_path(out, SRMF_MODEL_NAME), &completion.prediction)?;
        io::write_json(
            &out.join(io::COMPLETION_JSON),
            &CompletionMeta {
                shift: config.shift(),
                sweeps: completion.model.sweeps(),
                converged: completion.model.converged,
                final_objective: completion
                    .model
                    .objective_trace
                    .last()
                    .copied()
                    .unwrap_or(completion.model.initial_objective),
                timing: completion.timing.clone(),
            },
        )?;
        Ok(completion)
    })
}

/// Reads truth, mask and SRMF prediction, runs the baselines and writes the
/// report, baseline predictions and heatmaps.
pub fn run_evaluate(config: &ExperimentConfig) -> Result<EvaluationReport> {
    let out = &config.output_dir;
    tracked(out, Stage::Evaluate, || {
        let space = config.validate()?;
        let dims = space.dims();
        let (truth, truth_meta) = load_truth(out, &space)?;
        let (mask, _) = io::read_mask(out)?;
        mask_dims(&mask, dims)?;
        let prediction = io::read_cells(&io::prediction_path(out, SRMF_MODEL_NAME), dims)?;
        let completion: CompletionMeta = io::read_json(&out.join(io::COMPLETION_JSON))?;
        let timing = TimingInputs {
            simulation_seconds: truth_meta.timing.simulation_seconds,
            model_seconds: completion.timing.model_seconds(),
        };
        let (report, baseline_predictions) =
            evaluate(config, &space, &truth, &mask, &prediction, Some(timing))?;
        let heatmaps = out.join(io::HEATMAP_DIR);
        io::write_heatmaps(&heatmaps, &prediction, &truth)?;
        for (b, pred) in &baseline_predictions {
            io::write_cells(&io::prediction_path(out, b.name()), pred)?;
            io::write_heatmaps(&heatmaps.join(b.name()), pred, &truth)?;
        }
        io::write_report(out, &report)?;
        Ok(report)
    })
}

/// Simulate, complete and evaluate in sequence, through the same persisted
/// artifacts the individual stages use.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<EvaluationReport> {
    run_simulate(config)?;
    run_complete(config)?;
    run_evaluate(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Rank,
    Lambda1,
    Lambda2,
    Lambda3,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Rank => "rank",
            SweepParameter::Lambda1 => "lambda1",
            SweepParameter::Lambda2 => "lambda2",
            SweepParameter::Lambda3 => "lambda3",
        }
    }

    /// Applies `value` to a copy of `hp`.
    pub fn apply(&self, hp: &Hyperparameters, value: f64) -> Result<Hyperparameters> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::SweepParameter(format!(
                "{} values must be positive, got {value}",
                self.name()
            )));
        }
        let mut hp = hp.clone();
        match self {
            SweepParameter::Rank => {
                if value.fract() != 0.0 {
                    return Err(Error::SweepParameter(format!("rank must be an integer, got {value}")));
                }
                hp.rank = value as usize;
            }
            SweepParameter::Lambda1 => hp.lambda1 = value,
            SweepParameter::Lambda2 => hp.lambda2 = value,
            SweepParameter::Lambda3 => hp.lambda3 = value,
        }
        Ok(hp)
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rank" | "r" => Ok(SweepParameter::Rank),
            "lambda1" | "λ1" => Ok(SweepParameter::Lambda1),
            "lambda2" | "λ2" => Ok(SweepParameter::Lambda2),
            "lambda3" | "λ3" => Ok(SweepParameter::Lambda3),
            other => Err(Error::SweepParameter(format!(
                "unknown parameter `{other}` (expected rank, lambda1, lambda2 or lambda3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub mae: f64,
    pub wmape: Option<f64>,
    pub precision: f64,
    pub f1: f64,
}

/// One fit per value over a shared simulation and observation set. Scoring
/// uses the configured evaluation mode.
pub fn sweep(
    config: &ExperimentConfig,
    space: &TestSpace,
    truth: &SafetyMatrix,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let settings = values
        .iter()
        .map(|&v| {
            let hp = parameter.apply(&config.solver, v)?;
            hp.validate_for(space.dims())?;
            Ok((v, hp))
        })
        .collect::<Result<Vec<_>>>()?;
    if settings.is_empty() {
        return Ok(Vec::new());
    }
    let mask = build_sampling_mask(space, &config.sampling)?;
    let eval_mask = eval::evaluation_cell_set(&mask, config.evaluation.mode);
    if eval_mask.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    settings
        .into_par_iter()
        .map(|(value, hp)| {
            let (_, pred, _) = fit_and_predict(space, truth, &mask, &hp, config.shift())?;
            let (mae, wmape) = match eval::regression_metrics(&pred, truth, &eval_mask) {
                Ok((mae, wmape)) => (mae, Some(wmape)),
                Err(Error::UndefinedWmape) => {
                    let cells = eval_mask.len() as f64;
                    let mae = eval_mask
                        .indices()
                        .map(|(i, m)| (pred.values[(i, m)] - truth.values[(i, m)]).abs())
                        .sum::<f64>()
                        / cells;
                    (mae, None)
                }
                Err(e) => return Err(e),
            };
            let c = eval::classification_metrics(&pred, truth, &eval_mask)?;
            Ok(SweepRow {
                parameter: parameter.name().to_string(),
                value,
                mae,
                wmape,
                precision: c.precision,
                f1: c.f1,
            })
        })
        .collect()
}

/// Simulates once (only if there is anything to fit) and writes `sweep.csv`.
pub fn run_sweep(config: &ExperimentConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<SweepRow>> {
    let out = &config.output_dir;
    tracked(out, Stage::Sweep, || {
        let rows = if values.is_empty() {
            Vec::new()
        } else {
            let (space, truth) = simulate(config)?;
            sweep(config, &space, &truth.matrix, parameter, values)?
        };
        io::ensure_dir(out)?;
        io::write_sweep(&out.join(io::SWEEP_CSV), &rows)?;
        Ok(rows)
    })
}
