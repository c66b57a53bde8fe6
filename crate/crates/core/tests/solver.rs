use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srmf_core::data::{SafetyMatrix, SamplingMask};
use srmf_core::space::Dims;
use srmf_core::srmf::{
    ar_selector, difference_operator_scenarios, difference_operator_time, fit, objective,
    FactorModel, Hyperparameters, Solver,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, dims: Dims, fraction: f64) -> SamplingMask {
    let mut cells = Vec::new();
    for i in 0..dims.values {
        for m in 0..dims.columns() {
            if rng.random::<f64>() < fraction {
                cells.push((i, m));
            }
        }
    }
    SamplingMask::from_indices(dims, &cells).unwrap()
}

struct Instance {
    dims: Dims,
    x: SafetyMatrix,
    mask: SamplingMask,
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    t: Vec<DMatrix<f64>>,
}

fn instance(seed: u64, dims: Dims, rank: usize, order: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = SafetyMatrix::new(random_matrix(&mut rng, dims.values, dims.columns()), dims).unwrap();
    let mask = random_mask(&mut rng, dims, 0.5);
    Instance {
        dims,
        x,
        mask,
        w: random_matrix(&mut rng, rank, dims.values),
        h: random_matrix(&mut rng, rank, dims.columns()),
        t: (0..order).map(|_| random_matrix(&mut rng, rank, rank) * 0.5).collect(),
    }
}

fn hp(rank: usize, rho: f64, l1: f64, l2: f64, l3: f64, order: usize) -> Hyperparameters {
    Hyperparameters {
        rank,
        rho,
        lambda1: l1,
        lambda2: l2,
        lambda3: l3,
        ar_order: order,
        ..Hyperparameters::default()
    }
}

fn solver_at(inst: &Instance, hp: &Hyperparameters) -> Solver {
    let mut s = Solver::new(&inst.x, &inst.mask, hp).unwrap();
    s.set_factors(inst.w.clone(), inst.h.clone(), inst.t.clone()).unwrap();
    s
}

/// The objective written directly with the dense operators.
fn dense_objective(inst: &Instance, w: &DMatrix<f64>, h: &DMatrix<f64>, t: &[DMatrix<f64>], hp: &Hyperparameters) -> f64 {
    let dims = inst.dims;
    let mut data = 0.0;
    let pred = w.transpose() * h;
    for (i, m) in inst.mask.indices() {
        data += (inst.x.values[(i, m)] - pred[(i, m)]).powi(2);
    }
    let psi1 = difference_operator_scenarios(dims.columns()).unwrap();
    let psi2 = difference_operator_time(dims.columns(), dims.scenarios).unwrap();
    let l = hp.ar_order;
    let mut ar = w * ar_selector(dims.values, l, 0).unwrap().transpose();
    for u in 1..=l {
        ar -= &t[u - 1] * w * ar_selector(dims.values, l, u).unwrap().transpose();
    }
    0.5 * data
        + 0.5 * hp.rho * (w.norm_squared() + h.norm_squared())
        + 0.5 * hp.lambda1 * (h * psi1.transpose()).norm_squared()
        + 0.5 * hp.lambda2 * (h * psi2.transpose()).norm_squared()
        + 0.5 * hp.lambda3 * ar.norm_squared()
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn h_column_update_matches_ridge_normal_equations() {
    let inst = instance(11, Dims::new(7, 4, 3), 3, 1);
    let hp = hp(3, 0.05, 0.0, 0.0, 2.0, 1);
    let mut solver = solver_at(&inst, &hp);
    for m in 0..inst.dims.columns() {
        // ridge normal equations over the observed rows of column m
        let rows: Vec<usize> = (0..inst.dims.values).filter(|&i| inst.mask.contains(i, m)).collect();
        let wo = DMatrix::from_fn(hp.rank, rows.len(), |r, q| inst.w[(r, rows[q])]);
        let xo = DVector::from_iterator(rows.len(), rows.iter().map(|&i| inst.x.values[(i, m)]));
        let a = &wo * wo.transpose() + DMatrix::identity(hp.rank, hp.rank) * hp.rho;
        let oracle = a.lu().solve(&(&wo * xo)).unwrap();
        solver.update_h_column(m).unwrap();
        let got = solver.h().column(m).into_owned();
        assert!(rel_err(&got, &oracle) < 1e-8, "column {m}: {got} vs {oracle}");
    }
}

#[test]
fn h_column_update_with_smoothness_matches_dense_operators() {
    let inst = instance(12, Dims::new(6, 3, 4), 2, 1);
    let hp = hp(2, 0.1, 0.7, 1.3, 0.0, 1);
    let mut solver = solver_at(&inst, &hp);
    let psi1 = difference_operator_scenarios(inst.dims.columns()).unwrap();
    let psi2 = difference_operator_time(inst.dims.columns(), inst.dims.scenarios).unwrap();
    for m in 0..inst.dims.columns() {
        let h = solver.h().clone();
        let r = hp.rank;
        let mut a = DMatrix::identity(r, r) * hp.rho;
        let mut b = DVector::zeros(r);
        for i in 0..inst.dims.values {
            if inst.mask.contains(i, m) {
                let wi = inst.w.column(i);
                a += wi * wi.transpose();
                b += wi * inst.x.values[(i, m)];
            }
        }
        for (lambda, psi) in [(hp.lambda1, &psi1), (hp.lambda2, &psi2)] {
            for q in 0..psi.nrows() {
                let c = psi[(q, m)];
                if c == 0.0 {
                    continue;
                }
                let mut rest = DVector::zeros(r);
                for n in (0..inst.dims.columns()).filter(|&n| n != m) {
                    rest += h.column(n) * psi[(q, n)];
                }
                a += DMatrix::identity(r, r) * (lambda * c * c);
                b -= rest * (lambda * c);
            }
        }
        let oracle = a.lu().solve(&b).unwrap();
        solver.update_h_column(m).unwrap();
        assert!(rel_err(&solver.h().column(m).into_owned(), &oracle) < 1e-8);
    }
}

/// Recovers the quadratic `f(v) = v^T A v / 2 - b^T v + c` by probing and
/// returns its minimizer.
fn probe_minimizer(dim: usize, f: impl Fn(&DVector<f64>) -> f64) -> DVector<f64> {
    let e = |k: usize| DVector::from_fn(dim, |q, _| if q == k { 1.0 } else { 0.0 });
    let f0 = f(&DVector::zeros(dim));
    let fk: Vec<f64> = (0..dim).map(|k| f(&e(k))).collect();
    let fm: Vec<f64> = (0..dim).map(|k| f(&(-e(k)))).collect();
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for k in 0..dim {
        a[(k, k)] = fk[k] + fm[k] - 2.0 * f0;
        b[k] = (fm[k] - fk[k]) / 2.0;
    }
    for k in 0..dim {
        for l in k + 1..dim {
            let v = f(&(e(k) + e(l))) - fk[k] - fk[l] + f0;
            a[(k, l)] = v;
            a[(l, k)] = v;
        }
    }
    a.lu().solve(&b).unwrap()
}

#[test]
fn w_column_update_minimizes_the_full_objective() {
    let inst = instance(13, Dims::new(6, 3, 3), 3, 2);
    let hp = hp(3, 0.2, 0.5, 0.5, 3.0, 2);
    let mut solver = solver_at(&inst, &hp);
    for i in 0..inst.dims.values {
        let w = solver.w().clone();
        let oracle = probe_minimizer(hp.rank, |v| {
            let mut w2 = w.clone();
            w2.set_column(i, v);
            dense_objective(&inst, &w2, &inst.h, &inst.t, &hp)
        });
        solver.update_w_column(i).unwrap();
        let got = solver.w().column(i).into_owned();
        assert!(rel_err(&got, &oracle) < 1e-7, "row {i}: {got} vs {oracle}");
    }
}

#[test]
fn t_update_matches_dense_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dims = Dims::new(8, 2, 5);
    let w = random_matrix(&mut rng, 5, 8);
    let h = random_matrix(&mut rng, 5, dims.columns());
    let x = SafetyMatrix::new(random_matrix(&mut rng, 8, dims.columns()), dims).unwrap();
    let mask = SamplingMask::full(dims);
    let hp = hp(5, 0.01, 1.0, 1.0, 10.0, 1);
    let mut solver = Solver::new(&x, &mask, &hp).unwrap();
    solver.set_factors(w.clone(), h, vec![DMatrix::zeros(5, 5)]).unwrap();
    solver.update_t().unwrap();
    // T = Y Z^T (Z Z^T)^-1 with Y = w[1..], Z = w[..7]
    let y = w.columns(1, 7).into_owned();
    let z = w.columns(0, 7).into_owned();
    let oracle = &y * z.transpose() * (&z * z.transpose()).try_inverse().unwrap();
    let got = &solver.t()[0];
    assert!((got - &oracle).norm() / oracle.norm() < 1e-8);
}

#[test]
fn objective_hand_value() {
    let dims = Dims::new(2, 1, 2);
    let x = SafetyMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), dims).unwrap();
    let mask = SamplingMask::full(dims);
    let hp = hp(1, 1.0, 2.0, 0.0, 8.0, 1);
    let model = FactorModel {
        dims,
        hyperparameters: hp.clone(),
        w: DMatrix::from_element(1, 2, 1.0),
        h: DMatrix::from_element(1, 2, 1.0),
        t: vec![DMatrix::from_element(1, 1, 0.5)],
        objective_trace: Vec::new(),
        initial_objective: 0.0,
        converged: false,
    };
    // data 1/2 (1 + 1) + rho 1/2 (2 + 2) + ar 8/2 (1 - 0.5)^2 = 1 + 2 + 1
    assert!((objective(&x, &mask, &model, &hp).unwrap() - 4.0).abs() < 1e-15);
}

#[test]
fn pair_objective_equals_dense_objective() {
    for seed in 0..5 {
        let inst = instance(20 + seed, Dims::new(7, 4, 3), 3, 2);
        let hp = hp(3, 0.3, 0.9, 1.7, 2.5, 2);
        let solver = solver_at(&inst, &hp);
        let dense = dense_objective(&inst, &inst.w, &inst.h, &inst.t, &hp);
        assert!((solver.objective() - dense).abs() <= 1e-12 * dense.abs());
    }
}

#[test]
fn fully_observed_full_rank_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let dims = Dims::new(4, 3, 2);
    let x = SafetyMatrix::new(random_matrix(&mut rng, 4, 6), dims).unwrap();
    let hp = Hyperparameters {
        rank: 4,
        rho: 1e-12,
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        max_iters: 5000,
        rel_tol: 0.0,
        ..Hyperparameters::default()
    };
    let model = fit(&x, &SamplingMask::full(dims), &hp).unwrap();
    let err = (model.predict(0.0).values - &x.values).amax();
    assert!(err < 1e-6, "max error {err}");
}

#[test]
fn heavy_scenario_smoothing_flattens_adjacent_columns() {
    let inst = instance(31, Dims::new(10, 5, 4), 3, 1);
    let hp = Hyperparameters {
        lambda1: 1e6,
        lambda2: 0.0,
        lambda3: 0.0,
        // Gauss-Seidel diffuses along the column chain, so this needs many sweeps
        max_iters: 3000,
        rel_tol: 0.0,
        ..hp(3, 0.01, 0.0, 0.0, 0.0, 1)
    };
    let model = fit(&inst.x, &inst.mask, &hp).unwrap();
    let psi1 = difference_operator_scenarios(inst.dims.columns()).unwrap();
    let ratio = (&model.h * psi1.transpose()).norm() / model.h.norm();
    assert!(ratio < 1e-2, "ratio {ratio}");
}

#[test]
fn fit_is_deterministic_per_seed() {
    let inst = instance(32, Dims::new(8, 4, 3), 3, 1);
    let hp = Hyperparameters {
        max_iters: 20,
        ..hp(3, 0.01, 1.0, 1.0, 10.0, 1)
    };
    let a = fit(&inst.x, &inst.mask, &hp).unwrap();
    let b = fit(&inst.x, &inst.mask, &hp).unwrap();
    assert_eq!(a, b);
    let c = fit(&inst.x, &inst.mask, &Hyperparameters { seed: 1, ..hp }).unwrap();
    assert_ne!(a.w, c.w);
}

#[test]
fn trace_starts_below_initial_objective() {
    let inst = instance(33, Dims::new(8, 4, 3), 3, 1);
    let hp = Hyperparameters {
        max_iters: 10,
        ..hp(3, 0.01, 1.0, 1.0, 10.0, 1)
    };
    let model = fit(&inst.x, &inst.mask, &hp).unwrap();
    assert_eq!(model.sweeps(), 10);
    assert!(model.objective_trace[0] <= model.initial_objective);
}

#[test]
fn empty_observation_set_is_rejected() {
    let dims = Dims::new(3, 2, 2);
    let x = SafetyMatrix::zeros(dims);
    let err = Solver::new(&x, &SamplingMask::empty(dims), &hp(2, 0.1, 1.0, 1.0, 1.0, 1));
    assert!(err.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_block_update_is_non_increasing(
        seed in 0u64..10_000,
        values in 3usize..7,
        steps in 2usize..4,
        scenarios in 1usize..4,
        l1 in 0.0f64..3.0,
        l3 in 0.0f64..5.0,
    ) {
        let dims = Dims::new(values, steps, scenarios);
        let rank = 2.min(values).min(dims.columns());
        let inst = instance(seed, dims, rank, 1);
        let hp = hp(rank, 0.05, l1, 0.5, l3, 1);
        let mut solver = solver_at(&inst, &hp);
        let mut last = solver.objective();
        let slack = |v: f64| v * (1.0 + 1e-9) + 1e-12;
        for m in 0..dims.columns() {
            solver.update_h_column(m).unwrap();
            let now = solver.objective();
            prop_assert!(now <= slack(last), "H {m}: {now} > {last}");
            last = now;
        }
        for i in 0..values {
            solver.update_w_column(i).unwrap();
            let now = solver.objective();
            prop_assert!(now <= slack(last), "W {i}: {now} > {last}");
            last = now;
        }
        solver.update_t().unwrap();
        prop_assert!(solver.objective() <= slack(last));
    }
}
