use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SafetyMatrix;
use crate::error::{Error, Result};
use crate::space::Dims;

/// Highest supported autoregressive order.
pub const MAX_AR_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub rank: usize,
    /// Frobenius penalty on both factors.
    pub rho: f64,
    /// Smoothness between adjacent scenarios.
    pub lambda1: f64,
    /// Smoothness between adjacent injection steps.
    pub lambda2: f64,
    /// Autoregressive penalty along fault values.
    pub lambda3: f64,
    pub ar_order: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Drop scenario-smoothness pairs that straddle an injection-step block
    /// or a functional-scenario boundary.
    #[serde(default)]
    pub mask_cross_block_smoothness: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            rank: 10,
            rho: 0.01,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 10.0,
            ar_order: 1,
            max_iters: 150,
            rel_tol: 1e-6,
            seed: 0,
            mask_cross_block_smoothness: false,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("solver.rank", "must be at least 1"));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("rel_tol", self.rel_tol),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("solver.{name}"),
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        if !(1..=MAX_AR_ORDER).contains(&self.ar_order) {
            return Err(Error::config(
                "solver.ar_order",
                format!("must lie in 1..={MAX_AR_ORDER}, got {}", self.ar_order),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::config("solver.max_iters", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks the rank and AR order against a concrete matrix shape.
    pub fn validate_for(&self, dims: Dims) -> Result<()> {
        self.validate()?;
        let bound = dims.values.min(dims.columns());
        if self.rank > bound {
            return Err(Error::config(
                "solver.rank",
                format!("rank {} exceeds min(I, M) = {bound}", self.rank),
            ));
        }
        if self.ar_order >= dims.values {
            return Err(Error::config(
                "solver.ar_order",
                format!(
                    "order {} must be below the fault value count {}",
                    self.ar_order, dims.values
                ),
            ));
        }
        Ok(())
    }
}

/// Fitted low-rank factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub dims: Dims,
    pub hyperparameters: Hyperparameters,
    /// `R x I`, one column per fault value.
    pub w: DMatrix<f64>,
    /// `R x M`, one column per (injection step, scenario).
    pub h: DMatrix<f64>,
    /// Autoregressive coefficient matrices `T_1..T_l`, each `R x R`.
    pub t: Vec<DMatrix<f64>>,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub initial_objective: f64,
    pub converged: bool,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.w.nrows()
    }

    pub fn sweeps(&self) -> usize {
        self.objective_trace.len()
    }

    /// `W^T H`, then subtract `shift` to undo the positivity shift.
    pub fn predict(&self, shift: f64) -> SafetyMatrix {
        let values = self.w.transpose() * &self.h;
        SafetyMatrix {
            values: values.map(|v| v - shift),
            dims: self.dims,
            shift_applied: 0.0,
        }
    }

    pub fn to_file(&self) -> FactorModelFile {
        FactorModelFile {
            dims: self.dims,
            rank: self.rank(),
            hyperparameters: self.hyperparameters.clone(),
            seed: self.hyperparameters.seed,
            w: row_major(&self.w),
            h: row_major(&self.h),
            t: self.t.iter().map(row_major).collect(),
            objective_trace: self.objective_trace.clone(),
            initial_objective: self.initial_objective,
            converged: self.converged,
        }
    }

    pub fn from_file(file: &FactorModelFile) -> Result<Self> {
        let r = file.rank;
        let dims = file.dims;
        let take = |data: &[f64], rows: usize, cols: usize, what: &str| {
            if data.len() != rows * cols {
                return Err(Error::Dimension {
                    expected: format!("{what} with {} entries", rows * cols),
                    found: format!("{} entries", data.len()),
                });
            }
            Ok(DMatrix::from_row_slice(rows, cols, data))
        };
        Ok(FactorModel {
            dims,
            hyperparameters: file.hyperparameters.clone(),
            w: take(&file.w, r, dims.values, "W")?,
            h: take(&file.h, r, dims.columns(), "H")?,
            t: file
                .t
                .iter()
                .map(|t| take(t, r, r, "T"))
                .collect::<Result<_>>()?,
            objective_trace: file.objective_trace.clone(),
            initial_objective: file.initial_objective,
            converged: file.converged,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// JSON container for a fitted model; factor payloads are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelFile {
    pub dims: Dims,
    pub rank: usize,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub t: Vec<Vec<f64>>,
    pub objective_trace: Vec<f64>,
    pub initial_objective: f64,
    pub converged: bool,
}
