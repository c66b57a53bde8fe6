//! Folding per-cell safety indicators into the `I x (J*K)` matrix, the
//! observation mask and the sampling operator.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Dims, TestSpace};

/// One simulated cell of the test space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: usize,
    /// Fault value index `i`.
    pub row: usize,
    /// Injection step index `j`.
    pub step: usize,
    pub value: f64,
}

/// Safety indicators folded so that rows are fault values and column
/// `m = j * K + s` holds injection step `j` of scenario `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyMatrix {
    pub values: DMatrix<f64>,
    pub dims: Dims,
    /// Constant added to observed entries before factorization; 0 when raw.
    pub shift_applied: f64,
}

impl SafetyMatrix {
    pub fn new(values: DMatrix<f64>, dims: Dims) -> Result<Self> {
        if values.nrows() != dims.values || values.ncols() != dims.columns() {
            return Err(Error::Dimension {
                expected: format!("{}x{}", dims.values, dims.columns()),
                found: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        Ok(SafetyMatrix {
            values,
            dims,
            shift_applied: 0.0,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        SafetyMatrix {
            values: DMatrix::zeros(dims.values, dims.columns()),
            dims,
            shift_applied: 0.0,
        }
    }

    pub fn get(&self, scenario: usize, row: usize, step: usize) -> f64 {
        self.values[(row, self.dims.column_of(step, scenario))]
    }

    /// The `I x J` grid of one scenario, rows = fault values.
    pub fn scenario_grid(&self, scenario: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dims.values, self.dims.steps, |i, j| {
            self.get(scenario, i, j)
        })
    }

    pub fn check_same_dims(&self, other: Dims) -> Result<()> {
        if self.dims != other {
            return Err(Error::Dimension {
                expected: other.to_string(),
                found: self.dims.to_string(),
            });
        }
        Ok(())
    }
}

/// Places each cell at `(row, j * K + s)`. Every cell of `dims` must appear
/// exactly once.
pub fn fold(cells: &[Cell], dims: Dims) -> Result<SafetyMatrix> {
    let mut values = DMatrix::zeros(dims.values, dims.columns());
    let mut seen = vec![false; dims.cell_count()];
    for cell in cells {
        if cell.scenario >= dims.scenarios || cell.row >= dims.values || cell.step >= dims.steps
        {
            return Err(Error::Structural(format!(
                "cell (scenario {}, value {}, step {}) lies outside {dims}",
                cell.scenario, cell.row, cell.step
            )));
        }
        let column = dims.column_of(cell.step, cell.scenario);
        let flat = cell.row * dims.columns() + column;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(Error::Structural(format!(
                "duplicate cell (scenario {}, value {}, step {})",
                cell.scenario, cell.row, cell.step
            )));
        }
        values[(cell.row, column)] = cell.value;
    }
    if let Some(flat) = seen.iter().position(|s| !s) {
        let (row, column) = (flat / dims.columns(), flat % dims.columns());
        let (step, scenario) = dims.split_column(column);
        return Err(Error::Structural(format!(
            "missing cell (scenario {scenario}, value {row}, step {step})"
        )));
    }
    Ok(SafetyMatrix {
        values,
        dims,
        shift_applied: 0.0,
    })
}

/// Inverse of [`fold`], ordered by scenario, then row, then step.
pub fn unfold(matrix: &SafetyMatrix) -> Vec<Cell> {
    let dims = matrix.dims;
    let mut cells = Vec::with_capacity(dims.cell_count());
    for scenario in 0..dims.scenarios {
        for row in 0..dims.values {
            for step in 0..dims.steps {
                cells.push(Cell {
                    scenario,
                    row,
                    step,
                    value: matrix.get(scenario, row, step),
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSampling {
    pub functional_id: u32,
    /// Every `tested_interval`-th concrete scenario is tested.
    pub tested_interval: usize,
    /// Fraction of the `I * J` faults simulated in a tested scenario.
    pub tested_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub functional: Vec<FunctionalSampling>,
    #[serde(default)]
    pub anchor_offset: usize,
    pub seed: u64,
}

impl Default for SamplingPlan {
    /// Cut-in: every 2nd scenario with 20% of faults; car-following: every
    /// 3rd scenario with 10%.
    fn default() -> Self {
        SamplingPlan {
            functional: vec![
                FunctionalSampling {
                    functional_id: 1,
                    tested_interval: 2,
                    tested_fraction: 0.2,
                },
                FunctionalSampling {
                    functional_id: 2,
                    tested_interval: 3,
                    tested_fraction: 0.1,
                },
            ],
            anchor_offset: 0,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        for (k, f) in self.functional.iter().enumerate() {
            if f.tested_interval == 0 {
                return Err(Error::config(
                    format!("sampling.functional[{k}].tested_interval"),
                    "must be at least 1",
                ));
            }
            if !(0.0..=1.0).contains(&f.tested_fraction) {
                return Err(Error::config(
                    format!("sampling.functional[{k}].tested_fraction"),
                    format!("must lie in [0, 1], got {}", f.tested_fraction),
                ));
            }
        }
        Ok(())
    }

    fn entry(&self, functional_id: u32) -> Result<&FunctionalSampling> {
        self.functional
            .iter()
            .find(|f| f.functional_id == functional_id)
            .ok_or_else(|| {
                Error::config(
                    "sampling.functional",
                    format!("no entry for functional scenario {functional_id}"),
                )
            })
    }
}

/// Observed index set over the folded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub dims: Dims,
    observed: Vec<bool>,
    count: usize,
    /// Whether each scenario has any simulated cells.
    pub scenario_tested: Vec<bool>,
    /// Planned tested fraction per scenario.
    pub scenario_fraction: Vec<f64>,
}

impl SamplingMask {
    /// Builds a mask from explicit `(row, column)` pairs. Scenarios count as
    /// tested when at least one of their cells is observed.
    pub fn from_indices(dims: Dims, indices: &[(usize, usize)]) -> Result<Self> {
        let cols = dims.columns();
        let mut observed = vec![false; dims.values * cols];
        let mut per_scenario = vec![0usize; dims.scenarios];
        let mut count = 0;
        for &(row, col) in indices {
            if row >= dims.values || col >= cols {
                return Err(Error::Index {
                    what: if row >= dims.values { "mask row" } else { "mask column" },
                    index: if row >= dims.values { row } else { col },
                    bound: if row >= dims.values { dims.values } else { cols },
                });
            }
            if !std::mem::replace(&mut observed[row * cols + col], true) {
                count += 1;
                per_scenario[dims.split_column(col).1] += 1;
            }
        }
        let per_cell = dims.values * dims.steps;
        Ok(SamplingMask {
            dims,
            observed,
            count,
            scenario_tested: per_scenario.iter().map(|&n| n > 0).collect(),
            scenario_fraction: per_scenario
                .iter()
                .map(|&n| n as f64 / per_cell as f64)
                .collect(),
        })
    }

    pub fn empty(dims: Dims) -> Self {
        SamplingMask::from_indices(dims, &[]).expect("empty mask is always valid")
    }

    pub fn full(dims: Dims) -> Self {
        let indices: Vec<_> = (0..dims.values)
            .flat_map(|i| (0..dims.columns()).map(move |m| (i, m)))
            .collect();
        SamplingMask::from_indices(dims, &indices).expect("full mask is always valid")
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.dims.values
            && col < self.dims.columns()
            && self.observed[row * self.dims.columns() + col]
    }

    /// Observed indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.dims.columns();
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(flat, _)| (flat / cols, flat % cols))
    }

    /// Complement of the mask, with the same scenario bookkeeping.
    pub fn complement(&self) -> SamplingMask {
        let observed: Vec<bool> = self.observed.iter().map(|o| !o).collect();
        SamplingMask {
            dims: self.dims,
            count: self.observed.len() - self.count,
            observed,
            scenario_tested: self.scenario_tested.clone(),
            scenario_fraction: self.scenario_fraction.clone(),
        }
    }
}

/// Tests every `interval`-th concrete scenario (starting at the anchor) of
/// each functional scenario, and within each tested scenario draws
/// `round(r * I * J)` cells uniformly without replacement.
pub fn build_sampling_mask(space: &TestSpace, plan: &SamplingPlan) -> Result<SamplingMask> {
    plan.validate()?;
    let dims = space.dims();
    let per_scenario = dims.values * dims.steps;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut indices = Vec::new();
    let mut tested = vec![false; dims.scenarios];
    let mut fraction = vec![0.0; dims.scenarios];
    for scenario in &space.scenarios {
        let entry = plan.entry(scenario.functional_id)?;
        if scenario.local_index % entry.tested_interval != plan.anchor_offset % entry.tested_interval
        {
            continue;
        }
        tested[scenario.global_index] = true;
        fraction[scenario.global_index] = entry.tested_fraction;
        let n = (entry.tested_fraction * per_scenario as f64).round() as usize;
        let mut picked = sample(&mut rng, per_scenario, n.min(per_scenario)).into_vec();
        picked.sort_unstable();
        for flat in picked {
            let (row, step) = (flat / dims.steps, flat % dims.steps);
            indices.push((row, dims.column_of(step, scenario.global_index)));
        }
    }
    let mut mask = SamplingMask::from_indices(dims, &indices)?;
    mask.scenario_tested = tested;
    mask.scenario_fraction = fraction;
    Ok(mask)
}

/// Sampling operator: observed entries copied, all others exactly zero.
pub fn apply_sampling(x: &SafetyMatrix, mask: &SamplingMask) -> Result<SafetyMatrix> {
    x.check_same_dims(mask.dims)?;
    let values = DMatrix::from_fn(x.values.nrows(), x.values.ncols(), |i, m| {
        if mask.contains(i, m) {
            x.values[(i, m)]
        } else {
            0.0
        }
    });
    Ok(SafetyMatrix {
        values,
        dims: x.dims,
        shift_applied: x.shift_applied,
    })
}

/// Adds `shift` to observed entries only.
pub fn shift_to_positive(x: &SafetyMatrix, mask: &SamplingMask, shift: f64) -> Result<SafetyMatrix> {
    x.check_same_dims(mask.dims)?;
    let min_observed = mask
        .indices()
        .map(|(i, m)| x.values[(i, m)])
        .fold(f64::INFINITY, f64::min);
    if min_observed.is_finite() && !(min_observed + shift > 0.0) {
        return Err(Error::InsufficientShift {
            shift,
            min_observed,
        });
    }
    let mut values = x.values.clone();
    for (i, m) in mask.indices() {
        values[(i, m)] += shift;
    }
    Ok(SafetyMatrix {
        values,
        dims: x.dims,
        shift_applied: x.shift_applied + shift,
    })
}

/// Subtracts `shift` from every entry of a completed matrix.
pub fn inverse_shift(x: &SafetyMatrix, shift: f64) -> SafetyMatrix {
    SafetyMatrix {
        values: x.values.map(|v| v - shift),
        dims: x.dims,
        shift_applied: x.shift_applied - shift,
    }
}
