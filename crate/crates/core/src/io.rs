//! On-disk artifacts: CSV for numeric payloads, JSON for metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::SimulatorConfig;
use crate::data::{unfold, Cell, SafetyMatrix, SamplingMask, SamplingPlan};
use crate::error::{Error, Result};
use crate::eval::EvaluationReport;
use crate::space::{Dims, SpaceConfig};
use crate::srmf::{FactorModel, FactorModelFile};

pub const GROUND_TRUTH_CSV: &str = "ground_truth.csv";
pub const GROUND_TRUTH_JSON: &str = "ground_truth.json";
pub const MASK_CSV: &str = "mask.csv";
pub const MASK_JSON: &str = "mask.json";
pub const MODEL_JSON: &str = "model.json";
pub const COMPLETION_JSON: &str = "completion.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const STATUS_JSON: &str = "status.json";
pub const HEATMAP_DIR: &str = "heatmaps";

const CELL_HEADER: [&str; 4] = [
    "scenario_index",
    "fault_value_index",
    "injection_step_index",
    "safety_indicator",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes one row per cell, ordered by scenario, fault value, injection step.
pub fn write_cells(path: &Path, matrix: &SafetyMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CELL_HEADER).map_err(csv_err(path))?;
    for c in unfold(matrix) {
        w.write_record([
            c.scenario.to_string(),
            c.row.to_string(),
            c.step.to_string(),
            c.value.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Deserialize)]
struct CellRecord {
    scenario_index: usize,
    fault_value_index: usize,
    injection_step_index: usize,
    safety_indicator: f64,
}

pub fn read_cells(path: &Path, dims: Dims) -> Result<SafetyMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != CELL_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            detail: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut cells = Vec::with_capacity(dims.cell_count());
    for record in r.deserialize::<CellRecord>() {
        let rec = record.map_err(csv_err(path))?;
        cells.push(Cell {
            scenario: rec.scenario_index,
            row: rec.fault_value_index,
            step: rec.injection_step_index,
            value: rec.safety_indicator,
        });
    }
    crate::data::fold(&cells, dims).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMeta {
    pub dims: Dims,
    pub space: SpaceConfig,
    pub simulator: SimulatorConfig,
    pub timing: GroundTruthTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTiming {
    pub simulation_seconds: f64,
}

pub fn write_ground_truth(dir: &Path, matrix: &SafetyMatrix, meta: &GroundTruthMeta) -> Result<()> {
    ensure_dir(dir)?;
    write_cells(&dir.join(GROUND_TRUTH_CSV), matrix)?;
    write_json(&dir.join(GROUND_TRUTH_JSON), meta)
}

pub fn read_ground_truth(dir: &Path) -> Result<(SafetyMatrix, GroundTruthMeta)> {
    let meta: GroundTruthMeta = read_json(&dir.join(GROUND_TRUTH_JSON))?;
    let matrix = read_cells(&dir.join(GROUND_TRUTH_CSV), meta.dims)?;
    Ok((matrix, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub dims: Dims,
    pub plan: SamplingPlan,
    pub seed: u64,
    pub observed: usize,
    pub scenario_tested: Vec<bool>,
    pub scenario_fraction: Vec<f64>,
}

pub fn write_mask(dir: &Path, mask: &SamplingMask, plan: &SamplingPlan) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join(MASK_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["row", "col"]).map_err(csv_err(&path))?;
    for (i, m) in mask.indices() {
        w.write_record([i.to_string(), m.to_string()])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(
        &dir.join(MASK_JSON),
        &MaskHeader {
            dims: mask.dims,
            plan: plan.clone(),
            seed: plan.seed,
            observed: mask.len(),
            scenario_tested: mask.scenario_tested.clone(),
            scenario_fraction: mask.scenario_fraction.clone(),
        },
    )
}

pub fn read_mask(dir: &Path) -> Result<(SamplingMask, MaskHeader)> {
    let header: MaskHeader = read_json(&dir.join(MASK_JSON))?;
    let path = dir.join(MASK_CSV);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let mut indices = Vec::with_capacity(header.observed);
    for record in r.deserialize::<(usize, usize)>() {
        indices.push(record.map_err(csv_err(&path))?);
    }
    let mut mask = SamplingMask::from_indices(header.dims, &indices).map_err(|e| Error::Parse {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if header.scenario_tested.len() != header.dims.scenarios {
        return Err(Error::Parse {
            path: dir.join(MASK_JSON),
            detail: "scenario_tested length does not match the scenario count".into(),
        });
    }
    mask.scenario_tested = header.scenario_tested.clone();
    mask.scenario_fraction = header.scenario_fraction.clone();
    Ok((mask, header))
}

pub fn write_model(path: &Path, model: &FactorModel) -> Result<()> {
    write_json(path, &model.to_file())
}

pub fn read_model(path: &Path) -> Result<FactorModel> {
    let file: FactorModelFile = read_json(path)?;
    FactorModel::from_file(&file).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn prediction_path(dir: &Path, model: &str) -> PathBuf {
    dir.join(format!("prediction_{model}.csv"))
}

/// One scenario's `I x J` grid: a leading fault-value index column, then
/// one column per injection step.
pub fn write_heatmap(path: &Path, grid: &nalgebra::DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["fault_value_index".to_string()];
    header.extend((0..grid.ncols()).map(|j| j.to_string()));
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..grid.nrows() {
        let mut row = vec![i.to_string()];
        row.extend(grid.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `scenario_<id>_pred.csv` and `scenario_<id>_truth.csv` for every scenario.
pub fn write_heatmaps(dir: &Path, pred: &SafetyMatrix, truth: &SafetyMatrix) -> Result<()> {
    ensure_dir(dir)?;
    for s in 0..truth.dims.scenarios {
        write_heatmap(&dir.join(format!("scenario_{s}_pred.csv")), &pred.scenario_grid(s))?;
        write_heatmap(&dir.join(format!("scenario_{s}_truth.csv")), &truth.scenario_grid(s))?;
    }
    Ok(())
}

pub fn write_report(dir: &Path, report: &EvaluationReport) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join(REPORT_JSON), report)?;
    let path = dir.join(REPORT_TXT);
    fs::write(&path, report.render_text()).map_err(io_err(&path))
}

/// `parameter,value,mae,wmape,precision,f1`; an undefined WMAPE is left empty.
pub fn write_sweep(path: &Path, rows: &[crate::pipeline::SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["parameter", "value", "mae", "wmape", "precision", "f1"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.value.to_string(),
            r.mae.to_string(),
            r.wmape.map_or(String::new(), |v| v.to_string()),
            r.precision.to_string(),
            r.f1.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
