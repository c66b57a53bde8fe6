//! Reference predictors trained on the same sparse observations: k-nearest
//! neighbours and a constant mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SafetyMatrix, SamplingMask};
use crate::error::{Error, Result};
use crate::space::{ScenarioKind, TestSpace};

/// Normalized cell coordinates, every component in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub scenario_parameter: f64,
    pub functional_kind: f64,
    pub injection_step: f64,
    pub fault_value: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.scenario_parameter,
            self.functional_kind,
            self.injection_step,
            self.fault_value,
        ]
    }

    fn distance_sq(&self, other: &FeatureVector) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

fn unit(index: usize, count: usize) -> f64 {
    if count > 1 {
        index as f64 / (count - 1) as f64
    } else {
        0.0
    }
}

/// Features of cell `(row, column)` of the folded matrix.
pub fn encode(space: &TestSpace, row: usize, column: usize) -> FeatureVector {
    let dims = space.dims();
    let (step, s) = dims.split_column(column);
    let scenario = &space.scenarios[s];
    let local_count = space
        .functional(scenario.functional_id)
        .map_or(1, |f| f.scenario_count());
    FeatureVector {
        scenario_parameter: unit(scenario.local_index, local_count),
        functional_kind: match scenario.kind {
            ScenarioKind::CutIn => 0.0,
            ScenarioKind::CarFollowing => 1.0,
        },
        injection_step: unit(step, dims.steps),
        fault_value: unit(row, dims.values),
    }
}

/// Mean of the `k` nearest training values (Euclidean). Equal distances are
/// resolved in favour of the earlier training point; `k` is truncated to the
/// training set size.
pub fn knn_predict(train: &[(FeatureVector, f64)], query: &FeatureVector, k: usize) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if k == 0 {
        return Err(Error::config("baselines.knn_k", "must be at least 1"));
    }
    let k = k.min(train.len());
    // (distance, index), kept sorted ascending
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (idx, (x, _)) in train.iter().enumerate() {
        let d = x.distance_sq(query);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, idx));
        best.truncate(k);
    }
    Ok(best.iter().map(|&(_, idx)| train[idx].1).sum::<f64>() / k as f64)
}

/// Arithmetic mean of the training values.
pub fn mean_predict(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyTraining);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Knn,
    Mean,
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Knn => "knn",
            Baseline::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Ok(Baseline::Knn),
            "mean" => Ok(Baseline::Mean),
            other => Err(Error::config("baselines", format!("unknown baseline `{other}`"))),
        }
    }
}

/// Training pairs for the observed cells of `truth`, in row-major order.
pub fn training_set(
    space: &TestSpace,
    truth: &SafetyMatrix,
    mask: &SamplingMask,
) -> Vec<(FeatureVector, f64)> {
    mask.indices()
        .map(|(i, m)| (encode(space, i, m), truth.values[(i, m)]))
        .collect()
}

/// Full predicted matrix from a baseline trained on the observed cells.
pub fn predict_matrix(
    baseline: Baseline,
    space: &TestSpace,
    truth: &SafetyMatrix,
    mask: &SamplingMask,
    knn_k: usize,
) -> Result<SafetyMatrix> {
    truth.check_same_dims(mask.dims)?;
    let train = training_set(space, truth, mask);
    let dims = truth.dims;
    let cols = dims.columns();
    let flat: Vec<f64> = match baseline {
        Baseline::Mean => {
            let values: Vec<f64> = train.iter().map(|(_, v)| *v).collect();
            vec![mean_predict(&values)?; dims.values * cols]
        }
        Baseline::Knn => (0..dims.values * cols)
            .into_par_iter()
            .map(|f| knn_predict(&train, &encode(space, f / cols, f % cols), knn_k))
            .collect::<Result<_>>()?,
    };
    SafetyMatrix::new(
        nalgebra::DMatrix::from_row_slice(dims.values, cols, &flat),
        dims,
    )
}
