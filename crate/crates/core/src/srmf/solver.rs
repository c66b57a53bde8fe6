//! Alternating minimization of the smoothness-regularized factorization
//! objective
//!
//! ```text
//! 1/2 |P_Omega(X - W^T H)|^2 + rho/2 (|W|^2 + |H|^2)
//!   + l1/2 |H Psi_r1^T|^2 + l2/2 |H Psi_r2^T|^2
//!   + l3/2 |W Psi_0^T - sum_u T_u W Psi_u^T|^2
//! ```
//!
//! Each block (a column of `H`, a column of `W`, the stacked `T_u`) is
//! minimized exactly with the others held fixed, so the objective never
//! increases across a sweep.

use nalgebra::{DMatrix, DVector, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::model::{FactorModel, Hyperparameters};
use super::operators::SmoothnessPairs;
use crate::data::{SafetyMatrix, SamplingMask};
use crate::error::{Error, Result};
use crate::space::Dims;

/// Standard deviation of the random factor initialization.
const INIT_STD: f64 = 0.1;
const MIN_JITTER: f64 = 1e-8;

/// Observed entries grouped by column and by row.
#[derive(Debug, Clone)]
struct Observations {
    by_col: Vec<Vec<(usize, f64)>>,
    by_row: Vec<Vec<(usize, f64)>>,
}

impl Observations {
    fn new(x: &SafetyMatrix, mask: &SamplingMask) -> Result<Self> {
        x.check_same_dims(mask.dims)?;
        let mut by_col = vec![Vec::new(); x.values.ncols()];
        let mut by_row = vec![Vec::new(); x.values.nrows()];
        for (i, m) in mask.indices() {
            let v = x.values[(i, m)];
            if !v.is_finite() {
                return Err(Error::Numerical {
                    sweep: 0,
                    detail: format!("observed entry ({i}, {m}) is not finite"),
                });
            }
            by_col[m].push((i, v));
            by_row[i].push((m, v));
        }
        Ok(Observations { by_col, by_row })
    }
}

/// Solver state. Exposes the individual block updates so they can be
/// checked in isolation; [`fit`] drives complete sweeps.
#[derive(Debug, Clone)]
pub struct Solver {
    dims: Dims,
    hp: Hyperparameters,
    obs: Observations,
    pairs: SmoothnessPairs,
    scenario_neighbors: Vec<Vec<usize>>,
    time_neighbors: Vec<Vec<usize>>,
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    t: Vec<DMatrix<f64>>,
    sweep: usize,
}

impl Solver {
    /// Validates inputs and draws the seeded initial factors; `T_u = 0`.
    pub fn new(x_obs: &SafetyMatrix, mask: &SamplingMask, hp: &Hyperparameters) -> Result<Self> {
        let dims = x_obs.dims;
        hp.validate_for(dims)?;
        let obs = Observations::new(x_obs, mask)?;
        if mask.is_empty() {
            return Err(Error::config("sampling", "the observation set is empty"));
        }
        let r = hp.rank;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let w = DMatrix::from_fn(r, dims.values, |_, _| normal.sample(&mut rng));
        let h = DMatrix::from_fn(r, dims.columns(), |_, _| normal.sample(&mut rng));
        let t = vec![DMatrix::zeros(r, r); hp.ar_order];
        let mut solver = Solver {
            dims,
            hp: hp.clone(),
            obs,
            pairs: SmoothnessPairs::full(0, 1),
            scenario_neighbors: Vec::new(),
            time_neighbors: Vec::new(),
            w,
            h,
            t,
            sweep: 0,
        };
        solver.set_pairs(pairs_for(dims, hp, &[]));
        Ok(solver)
    }

    /// Scenario indices that start a new functional scenario; only used when
    /// `mask_cross_block_smoothness` is set.
    pub fn with_scenario_breaks(mut self, breaks: &[usize]) -> Self {
        let pairs = pairs_for(self.dims, &self.hp, breaks);
        self.set_pairs(pairs);
        self
    }

    fn set_pairs(&mut self, pairs: SmoothnessPairs) {
        let m = self.dims.columns();
        self.scenario_neighbors = neighbors(m, &pairs.scenario);
        self.time_neighbors = neighbors(m, &pairs.time);
        self.pairs = pairs;
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn t(&self) -> &[DMatrix<f64>] {
        &self.t
    }

    pub fn pairs(&self) -> &SmoothnessPairs {
        &self.pairs
    }

    /// Replaces the current factors, e.g. to start from a known point.
    pub fn set_factors(
        &mut self,
        w: DMatrix<f64>,
        h: DMatrix<f64>,
        t: Vec<DMatrix<f64>>,
    ) -> Result<()> {
        let r = self.hp.rank;
        let ok = w.shape() == (r, self.dims.values)
            && h.shape() == (r, self.dims.columns())
            && t.len() == self.hp.ar_order
            && t.iter().all(|t| t.shape() == (r, r));
        if !ok {
            return Err(Error::Dimension {
                expected: format!(
                    "W {r}x{}, H {r}x{}, {} T of {r}x{r}",
                    self.dims.values,
                    self.dims.columns(),
                    self.hp.ar_order
                ),
                found: format!(
                    "W {:?}, H {:?}, {} T",
                    w.shape(),
                    h.shape(),
                    t.len()
                ),
            });
        }
        self.w = w;
        self.h = h;
        self.t = t;
        Ok(())
    }

    pub fn objective(&self) -> f64 {
        objective_terms(&self.obs, &self.w, &self.h, &self.t, &self.pairs, &self.hp).total()
    }

    /// Exact minimization over column `m` of `H`.
    pub fn update_h_column(&mut self, m: usize) -> Result<()> {
        let r = self.hp.rank;
        let (l1, l2) = (self.hp.lambda1, self.hp.lambda2);
        let n1 = &self.scenario_neighbors[m];
        let n2 = &self.time_neighbors[m];
        let diag = self.hp.rho + l1 * n1.len() as f64 + l2 * n2.len() as f64;
        let mut a = DMatrix::from_diagonal_element(r, r, diag);
        let mut b = DVector::zeros(r);
        for &(i, x) in &self.obs.by_col[m] {
            let wi = self.w.column(i);
            a.ger(1.0, &wi, &wi, 1.0);
            b.axpy(x, &wi, 1.0);
        }
        for &n in n1 {
            b.axpy(l1, &self.h.column(n), 1.0);
        }
        for &n in n2 {
            b.axpy(l2, &self.h.column(n), 1.0);
        }
        let sol = solve_spd(a, b, self.sweep, || format!("H column {m}"))?;
        self.h.set_column(m, &sol);
        Ok(())
    }

    /// Exact minimization over column `i` of `W`, including every AR
    /// residual in which `w_i` appears as target or regressor.
    pub fn update_w_column(&mut self, i: usize) -> Result<()> {
        let r = self.hp.rank;
        let rows = self.dims.values;
        let order = self.hp.ar_order;
        let l3 = self.hp.lambda3;
        let mut a = DMatrix::from_diagonal_element(r, r, self.hp.rho);
        let mut b = DVector::zeros(r);
        for &(m, x) in &self.obs.by_row[i] {
            let hm = self.h.column(m);
            a.ger(1.0, &hm, &hm, 1.0);
            b.axpy(x, &hm, 1.0);
        }
        if l3 > 0.0 {
            // residual r_t = w_t - sum_u T_u w_{t-u}, for t in order..rows
            // written as C w_i + rest
            let first = i.max(order);
            let last = (i + order).min(rows - 1);
            for target in first..=last {
                let lag_of_i = target - i;
                let mut rest = DVector::zeros(r);
                if lag_of_i != 0 {
                    rest += self.w.column(target);
                }
                for u in 1..=order {
                    if u != lag_of_i {
                        rest -= &self.t[u - 1] * self.w.column(target - u);
                    }
                }
                if lag_of_i == 0 {
                    a += DMatrix::from_diagonal_element(r, r, l3);
                    b.axpy(-l3, &rest, 1.0);
                } else {
                    let c = &self.t[lag_of_i - 1];
                    a += l3 * c.transpose() * c;
                    b += l3 * c.transpose() * rest;
                }
            }
        }
        let sol = solve_spd(a, b, self.sweep, || format!("W column {i}"))?;
        self.w.set_column(i, &sol);
        Ok(())
    }

    /// Least-squares fit of `[T_1 .. T_l]` to the current `W`. A no-op when
    /// `lambda3 = 0`, where the AR term does not depend on `T`.
    pub fn update_t(&mut self) -> Result<()> {
        if self.hp.lambda3 == 0.0 {
            return Ok(());
        }
        let t = ar_least_squares(&self.w, self.hp.ar_order);
        if t.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical {
                sweep: self.sweep,
                detail: "AR coefficients are not finite".into(),
            });
        }
        self.t = t;
        Ok(())
    }

    /// One Gauss-Seidel sweep: every `H` column ascending, every `W` column
    /// ascending, then `T`.
    pub fn sweep(&mut self) -> Result<()> {
        self.sweep += 1;
        for m in 0..self.dims.columns() {
            self.update_h_column(m)?;
        }
        for i in 0..self.dims.values {
            self.update_w_column(i)?;
        }
        self.update_t()
    }

    pub fn run(mut self) -> Result<FactorModel> {
        let initial_objective = self.objective();
        let mut trace = Vec::with_capacity(self.hp.max_iters);
        let mut previous = initial_objective;
        let mut converged = false;
        for _ in 0..self.hp.max_iters {
            self.sweep()?;
            let value = self.objective();
            if !value.is_finite() {
                return Err(Error::Numerical {
                    sweep: self.sweep,
                    detail: format!("objective is {value}"),
                });
            }
            trace.push(value);
            let change = (previous - value).abs() / previous.abs().max(f64::MIN_POSITIVE);
            previous = value;
            if change < self.hp.rel_tol {
                converged = true;
                break;
            }
        }
        Ok(FactorModel {
            dims: self.dims,
            hyperparameters: self.hp,
            w: self.w,
            h: self.h,
            t: self.t,
            objective_trace: trace,
            initial_objective,
            converged,
        })
    }
}

/// Fits factors to the observed entries of `x_obs` (already shifted).
pub fn fit(x_obs: &SafetyMatrix, mask: &SamplingMask, hp: &Hyperparameters) -> Result<FactorModel> {
    Solver::new(x_obs, mask, hp)?.run()
}

/// Objective value of a model against observed data.
pub fn objective(
    x_obs: &SafetyMatrix,
    mask: &SamplingMask,
    model: &FactorModel,
    hp: &Hyperparameters,
) -> Result<f64> {
    x_obs.check_same_dims(model.dims)?;
    let obs = Observations::new(x_obs, mask)?;
    let r = model.w.nrows();
    if model.h.nrows() != r || model.h.ncols() != model.dims.columns() {
        return Err(Error::Dimension {
            expected: format!("H {r}x{}", model.dims.columns()),
            found: format!("H {}x{}", model.h.nrows(), model.h.ncols()),
        });
    }
    if model.t.len() != hp.ar_order {
        return Err(Error::Dimension {
            expected: format!("{} AR matrices", hp.ar_order),
            found: format!("{}", model.t.len()),
        });
    }
    let pairs = pairs_for(model.dims, hp, &[]);
    Ok(objective_terms(&obs, &model.w, &model.h, &model.t, &pairs, hp).total())
}

/// The objective split into its weighted terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub data: f64,
    pub frobenius: f64,
    pub scenario_smoothness: f64,
    pub time_smoothness: f64,
    pub autoregressive: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data
            + self.frobenius
            + self.scenario_smoothness
            + self.time_smoothness
            + self.autoregressive
    }
}

fn objective_terms(
    obs: &Observations,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    t: &[DMatrix<f64>],
    pairs: &SmoothnessPairs,
    hp: &Hyperparameters,
) -> ObjectiveTerms {
    let mut data = 0.0;
    for (m, col) in obs.by_col.iter().enumerate() {
        let hm = h.column(m);
        for &(i, x) in col {
            let e = x - w.column(i).dot(&hm);
            data += e * e;
        }
    }
    let diff_sq = |pairs: &[(usize, usize)]| -> f64 {
        pairs
            .iter()
            .map(|&(a, b)| (h.column(b) - h.column(a)).norm_squared())
            .sum()
    };
    let order = t.len();
    let mut ar = 0.0;
    if hp.lambda3 > 0.0 {
        for target in order..w.ncols() {
            let mut resid = w.column(target).into_owned();
            for (u, tu) in t.iter().enumerate() {
                resid -= tu * w.column(target - u - 1);
            }
            ar += resid.norm_squared();
        }
    }
    ObjectiveTerms {
        data: 0.5 * data,
        frobenius: 0.5 * hp.rho * (w.norm_squared() + h.norm_squared()),
        scenario_smoothness: if hp.lambda1 > 0.0 {
            0.5 * hp.lambda1 * diff_sq(&pairs.scenario)
        } else {
            0.0
        },
        time_smoothness: if hp.lambda2 > 0.0 {
            0.5 * hp.lambda2 * diff_sq(&pairs.time)
        } else {
            0.0
        },
        autoregressive: 0.5 * hp.lambda3 * ar,
    }
}

fn pairs_for(dims: Dims, hp: &Hyperparameters, breaks: &[usize]) -> SmoothnessPairs {
    if hp.mask_cross_block_smoothness {
        SmoothnessPairs::masked(dims.columns(), dims.scenarios, breaks)
    } else {
        SmoothnessPairs::full(dims.columns(), dims.scenarios)
    }
}

fn neighbors(m: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); m];
    for &(a, b) in pairs {
        out[a].push(b);
        out[b].push(a);
    }
    out
}

/// Minimum-norm least-squares `[T_1 .. T_l]` for `w_t ~ sum_u T_u w_{t-u}`.
pub fn ar_least_squares(w: &DMatrix<f64>, order: usize) -> Vec<DMatrix<f64>> {
    let r = w.nrows();
    let n = w.ncols().saturating_sub(order);
    if n == 0 {
        return vec![DMatrix::zeros(r, r); order];
    }
    // Z^T (n x rl) * T^T (rl x r) = Y^T (n x r)
    let zt = DMatrix::from_fn(n, r * order, |q, c| {
        let (u, row) = (c / r, c % r);
        w[(row, q + order - u - 1)]
    });
    let yt = DMatrix::from_fn(n, r, |q, c| w[(c, q + order)]);
    let svd = SVD::new(zt, true, true);
    let largest = svd.singular_values.max();
    let eps = largest * f64::EPSILON * (n.max(r * order)) as f64;
    let tt = svd
        .solve(&yt, eps)
        .unwrap_or_else(|_| DMatrix::zeros(r * order, r));
    (0..order)
        .map(|u| tt.rows(u * r, r).transpose())
        .collect()
}

/// Solves `a x = b` for symmetric positive (semi)definite `a`, adding a
/// diagonal jitter of at least 1e-8 when the factorization fails.
fn solve_spd(
    a: DMatrix<f64>,
    b: DVector<f64>,
    sweep: usize,
    what: impl Fn() -> String,
) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut jitter = MIN_JITTER * scale;
    for _ in 0..12 {
        let mut shifted = a.clone();
        for d in 0..shifted.nrows() {
            shifted[(d, d)] += jitter;
        }
        if let Some(chol) = shifted.cholesky() {
            let x = chol.solve(&b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical {
        sweep,
        detail: format!("{} system is singular", what()),
    })
}
