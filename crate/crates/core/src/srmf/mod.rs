//! Smoothness-regularized low-rank matrix factorization.

mod model;
mod operators;
mod solver;

pub use model::{FactorModel, FactorModelFile, Hyperparameters, MAX_AR_ORDER};
pub use operators::{
    ar_selector, difference_operator_scenarios, difference_operator_time, SmoothnessPairs,
};
pub use solver::{ar_least_squares, fit, objective, ObjectiveTerms, Solver};
