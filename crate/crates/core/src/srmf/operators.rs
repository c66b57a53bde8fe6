//! Difference and lag-selection operators.
//!
//! The dense matrices are what the objective is defined with; the solver
//! works on the equivalent sparse pair lists from [`SmoothnessPairs`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `(M-1) x M` first-difference operator: row `q` has -1 at `q` and +1 at
/// `q+1`, so column `q` of `H * Psi^T` is `h[q+1] - h[q]`.
pub fn difference_operator_scenarios(m: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::config("columns", format!("need at least 2 columns, got {m}")));
    }
    lag_difference(m, 1)
}

/// `(M-K) x M` lag-`K` difference operator linking the same scenario at
/// adjacent injection steps.
pub fn difference_operator_time(m: usize, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || !m.is_multiple_of(k) {
        return Err(Error::config(
            "columns",
            format!("column count {m} is not a multiple of the scenario count {k}"),
        ));
    }
    if m < 2 * k {
        return Err(Error::config(
            "columns",
            format!("need at least two injection steps ({m} columns, {k} scenarios)"),
        ));
    }
    lag_difference(m, k)
}

fn lag_difference(m: usize, lag: usize) -> Result<DMatrix<f64>> {
    let mut psi = DMatrix::zeros(m - lag, m);
    for q in 0..m - lag {
        psi[(q, q)] = -1.0;
        psi[(q, q + lag)] = 1.0;
    }
    Ok(psi)
}

/// `(I-l) x I` selector `[0_{l-u} | I_{I-l} | 0_u]`; `W * Psi_u^T` stacks
/// `w[t-u]` for `t = l..I`.
pub fn ar_selector(rows: usize, order: usize, lag: usize) -> Result<DMatrix<f64>> {
    if order >= rows {
        return Err(Error::config(
            "solver.ar_order",
            format!("order {order} must be below the fault value count {rows}"),
        ));
    }
    if lag > order {
        return Err(Error::Index {
            what: "AR lag",
            index: lag,
            bound: order + 1,
        });
    }
    let n = rows - order;
    let mut psi = DMatrix::zeros(n, rows);
    for q in 0..n {
        psi[(q, q + order - lag)] = 1.0;
    }
    Ok(psi)
}

/// Column pairs `(a, b)` whose factor difference `h[b] - h[a]` is penalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmoothnessPairs {
    /// Adjacent columns (scenario smoothness).
    pub scenario: Vec<(usize, usize)>,
    /// Columns `K` apart (injection-time smoothness).
    pub time: Vec<(usize, usize)>,
}

impl SmoothnessPairs {
    /// Every row of both operators. `M` columns, `K` scenarios.
    pub fn full(m: usize, k: usize) -> Self {
        SmoothnessPairs {
            scenario: (0..m.saturating_sub(1)).map(|q| (q, q + 1)).collect(),
            time: (0..m.saturating_sub(k)).map(|q| (q, q + k)).collect(),
        }
    }

    /// Drops adjacent pairs that cross an injection-step block or start a new
    /// functional scenario (`breaks` lists scenario indices that begin one).
    pub fn masked(m: usize, k: usize, breaks: &[usize]) -> Self {
        let mut pairs = SmoothnessPairs::full(m, k);
        pairs.scenario.retain(|&(_, b)| {
            let s = b % k;
            s != 0 && !breaks.contains(&s)
        });
        pairs
    }
}
