//! Prediction-quality metrics: MAE and WMAPE of the safety indicator,
//! precision/recall/F1 of critical-fault detection, per-scenario breakdowns
//! and the acceleration rate over simulation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{SafetyMatrix, SamplingMask};
use crate::error::{Error, Result};
use crate::space::TestSpace;

/// Default rare-critical-fault threshold on the per-scenario critical rate.
pub const DEFAULT_RARE_THRESHOLD: f64 = 0.1;

/// A fault is critical when its safety indicator is strictly positive.
pub fn is_critical(x: f64) -> bool {
    x > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Only cells outside the observation set.
    #[default]
    #[serde(alias = "untested_only")]
    Untested,
    All,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "untested" | "untested_only" => Ok(EvalMode::Untested),
            "all" => Ok(EvalMode::All),
            other => Err(Error::config(
                "evaluation.mode",
                format!("expected `untested` or `all`, got `{other}`"),
            )),
        }
    }
}

/// Cells scored by the metrics.
pub fn evaluation_cell_set(observed: &SamplingMask, mode: EvalMode) -> SamplingMask {
    match mode {
        EvalMode::Untested => observed.complement(),
        EvalMode::All => {
            let mut all = SamplingMask::full(observed.dims);
            all.scenario_tested = observed.scenario_tested.clone();
            all.scenario_fraction = observed.scenario_fraction.clone();
            all
        }
    }
}

fn check_inputs(pred: &SafetyMatrix, truth: &SafetyMatrix, mask: &SamplingMask) -> Result<()> {
    truth.check_same_dims(pred.dims)?;
    mask.dims
        .eq(&truth.dims)
        .then_some(())
        .ok_or_else(|| Error::Dimension {
            expected: truth.dims.to_string(),
            found: mask.dims.to_string(),
        })
}

/// `(MAE, WMAPE)` over the cells of `eval_mask`.
pub fn regression_metrics(
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    eval_mask: &SamplingMask,
) -> Result<(f64, f64)> {
    check_inputs(pred, truth, eval_mask)?;
    regression_over(pred, truth, eval_mask.indices())
}

fn regression_over(
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    cells: impl Iterator<Item = (usize, usize)>,
) -> Result<(f64, f64)> {
    let (mut abs_err, mut abs_truth, mut n) = (0.0, 0.0, 0usize);
    for (i, m) in cells {
        let t = truth.values[(i, m)];
        abs_err += (pred.values[(i, m)] - t).abs();
        abs_truth += t.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    if abs_truth == 0.0 {
        return Err(Error::UndefinedWmape);
    }
    Ok((abs_err / n as f64, abs_err / abs_truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Classification {
    /// Zero-denominator conventions: precision 0 without predicted
    /// positives, recall 0 without true positives, F1 0 when `P + R = 0`.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Classification {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

pub fn classification_metrics(
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    eval_mask: &SamplingMask,
) -> Result<Classification> {
    check_inputs(pred, truth, eval_mask)?;
    Ok(classification_over(pred, truth, eval_mask.indices()))
}

fn classification_over(
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    cells: impl Iterator<Item = (usize, usize)>,
) -> Classification {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, m) in cells {
        match (
            is_critical(pred.values[(i, m)]),
            is_critical(truth.values[(i, m)]),
        ) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Classification::from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub cells: usize,
    pub mae: f64,
    /// `None` when every truth value in the block is zero.
    pub wmape: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn block_over(pred: &SafetyMatrix, truth: &SafetyMatrix, cells: &[(usize, usize)]) -> Option<MetricBlock> {
    if cells.is_empty() {
        return None;
    }
    let (mae, wmape) = match regression_over(pred, truth, cells.iter().copied()) {
        Ok((mae, wmape)) => (mae, Some(wmape)),
        Err(_) => {
            let mae = cells
                .iter()
                .map(|&(i, m)| (pred.values[(i, m)] - truth.values[(i, m)]).abs())
                .sum::<f64>()
                / cells.len() as f64;
            (mae, None)
        }
    };
    let c = classification_over(pred, truth, cells.iter().copied());
    Some(MetricBlock {
        cells: cells.len(),
        mae,
        wmape,
        precision: c.precision,
        recall: c.recall,
        f1: c.f1,
        true_positives: c.true_positives,
        false_positives: c.false_positives,
        false_negatives: c.false_negatives,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: usize,
    pub functional_id: u32,
    pub parameter_value: f64,
    /// Whether the scenario had any simulated cells ("existing").
    pub tested: bool,
    /// Truth-critical cells over all `I * J` cells of the scenario.
    pub critical_rate: f64,
    pub rare: bool,
    pub metrics: Option<MetricBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub scenarios: Vec<ScenarioRow>,
    pub existing: Option<MetricBlock>,
    pub new: Option<MetricBlock>,
}

/// Per-scenario metrics over the evaluated cells, plus aggregation into
/// existing (tested under `observed`) and new scenarios. A scenario is rare
/// when `0 < critical_rate < rare_threshold`.
pub fn scenario_breakdown(
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    space: &TestSpace,
    observed: &SamplingMask,
    eval_mask: &SamplingMask,
    rare_threshold: f64,
) -> Result<Breakdown> {
    check_inputs(pred, truth, eval_mask)?;
    check_inputs(pred, truth, observed)?;
    let dims = truth.dims;
    if space.dims() != dims {
        return Err(Error::Dimension {
            expected: dims.to_string(),
            found: space.dims().to_string(),
        });
    }
    let mut per_scenario: Vec<Vec<(usize, usize)>> = vec![Vec::new(); dims.scenarios];
    for (i, m) in eval_mask.indices() {
        per_scenario[dims.split_column(m).1].push((i, m));
    }
    let per_cell = (dims.values * dims.steps) as f64;
    let mut rows = Vec::with_capacity(dims.scenarios);
    let (mut existing, mut new) = (Vec::new(), Vec::new());
    for (s, cells) in per_scenario.iter().enumerate() {
        let criticals = (0..dims.values)
            .flat_map(|i| (0..dims.steps).map(move |j| (i, j)))
            .filter(|&(i, j)| is_critical(truth.get(s, i, j)))
            .count();
        let critical_rate = criticals as f64 / per_cell;
        let tested = observed.scenario_tested[s];
        if tested {
            existing.extend_from_slice(cells);
        } else {
            new.extend_from_slice(cells);
        }
        let scenario = &space.scenarios[s];
        rows.push(ScenarioRow {
            scenario: s,
            functional_id: scenario.functional_id,
            parameter_value: scenario.parameter_value,
            tested,
            critical_rate,
            rare: critical_rate > 0.0 && critical_rate < rare_threshold,
            metrics: block_over(pred, truth, cells),
        });
    }
    Ok(Breakdown {
        scenarios: rows,
        existing: block_over(pred, truth, &existing),
        new: block_over(pred, truth, &new),
    })
}

/// Simulation time divided by model time.
pub fn acceleration_rate(simulation_seconds: f64, model_seconds: f64) -> Result<f64> {
    if !(model_seconds > 0.0) {
        return Err(Error::ZeroModelTime(model_seconds));
    }
    Ok(simulation_seconds / model_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub overall: MetricBlock,
    pub existing: Option<MetricBlock>,
    pub new: Option<MetricBlock>,
    /// Aggregate over scenarios flagged rare.
    pub rare: Option<MetricBlock>,
    pub scenarios: Vec<ScenarioRow>,
}

/// Full metric set for one predictor.
pub fn evaluate_model(
    name: &str,
    pred: &SafetyMatrix,
    truth: &SafetyMatrix,
    space: &TestSpace,
    observed: &SamplingMask,
    eval_mask: &SamplingMask,
    rare_threshold: f64,
) -> Result<ModelReport> {
    check_inputs(pred, truth, eval_mask)?;
    let cells: Vec<_> = eval_mask.indices().collect();
    if cells.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    // surfaces an undefined WMAPE on the whole set as an error
    regression_over(pred, truth, cells.iter().copied())?;
    let overall = block_over(pred, truth, &cells).expect("non-empty");
    let breakdown = scenario_breakdown(pred, truth, space, observed, eval_mask, rare_threshold)?;
    let dims = truth.dims;
    let rare_cells: Vec<_> = cells
        .iter()
        .copied()
        .filter(|&(_, m)| breakdown.scenarios[dims.split_column(m).1].rare)
        .collect();
    Ok(ModelReport {
        model: name.to_string(),
        overall,
        existing: breakdown.existing,
        new: breakdown.new,
        rare: block_over(pred, truth, &rare_cells),
        scenarios: breakdown.scenarios,
    })
}

/// Wall-clock measurements, kept apart from the deterministic report body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Simulating the whole test space.
    pub simulation_seconds: f64,
    /// Simulation time attributed to the evaluated cells.
    pub untested_simulation_seconds: f64,
    /// Fit plus prediction of the factorization model.
    pub model_seconds: f64,
    pub acceleration_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub rare_threshold: f64,
    pub total_cells: usize,
    pub observed_cells: usize,
    pub evaluated_cells: usize,
    pub models: Vec<ModelReport>,
    pub timing: Option<Timing>,
}

impl EvaluationReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    /// JSON with the timing object removed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut copy = self.clone();
        copy.timing = None;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }

    /// Aligned plain-text summary.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "evaluation: mode={:?} cells={} (observed {}, total {})",
            self.mode, self.evaluated_cells, self.observed_cells, self.total_cells
        );
        let _ = writeln!(
            out,
            "{:<8} {:<9} {:>7} {:>9} {:>8} {:>9} {:>8} {:>8}",
            "model", "group", "cells", "MAE", "WMAPE", "precision", "recall", "F1"
        );
        for model in &self.models {
            let groups = [
                ("all", Some(&model.overall)),
                ("existing", model.existing.as_ref()),
                ("new", model.new.as_ref()),
                ("rare", model.rare.as_ref()),
            ];
            for (group, block) in groups {
                let Some(b) = block else { continue };
                let wmape = b.wmape.map_or("-".to_string(), |w| format!("{w:.4}"));
                let _ = writeln!(
                    out,
                    "{:<8} {:<9} {:>7} {:>9.4} {:>8} {:>9.4} {:>8.4} {:>8.4}",
                    model.model, group, b.cells, b.mae, wmape, b.precision, b.recall, b.f1
                );
            }
        }
        if let Some(first) = self.models.first() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>6} {:>8} {:>5} {:>9} {:>9} {:>8}",
                "scenario", "parameter", "tested", "crit.rate", "rare", "MAE", "precision", "F1"
            );
            for row in &first.scenarios {
                let (mae, p, f1) = row
                    .metrics
                    .as_ref()
                    .map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.mae, m.precision, m.f1));
                let _ = writeln!(
                    out,
                    "{:<8} {:>9.2} {:>6} {:>8.3} {:>5} {:>9.4} {:>9.4} {:>8.4}",
                    row.scenario,
                    row.parameter_value,
                    if row.tested { "yes" } else { "no" },
                    row.critical_rate,
                    if row.rare { "yes" } else { "" },
                    mae,
                    p,
                    f1
                );
            }
        }
        if let Some(t) = &self.timing {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "simulation {:.3} s (evaluated cells {:.3} s), model {:.3} s, acceleration x{:.1}",
                t.simulation_seconds, t.untested_simulation_seconds, t.model_seconds, t.acceleration_rate
            );
        }
        out
    }
}
