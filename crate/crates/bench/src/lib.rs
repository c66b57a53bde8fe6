//! Deterministic fixtures shared by the benchmarks.

use srmf_core::data::{build_sampling_mask, SafetyMatrix, SamplingMask, SamplingPlan};
use srmf_core::space::{SpaceConfig, TestSpace};

/// Default-shaped space with a smooth rank-`rank` surface standing in for
/// simulated safety indicators, plus the default sampling mask.
pub fn synthetic_instance(rank: usize) -> (TestSpace, SafetyMatrix, SamplingMask) {
    let space = TestSpace::build(&SpaceConfig::default()).expect("default space");
    let dims = space.dims();
    let values = srmf_core::nalgebra::DMatrix::from_fn(dims.values, dims.columns(), |i, m| {
        (0..rank)
            .map(|r| {
                let f = (r + 1) as f64;
                (f * 0.07 * i as f64).sin() * (f * 0.013 * m as f64).cos() / f
            })
            .sum::<f64>()
            - 3.0
    });
    let truth = SafetyMatrix::new(values, dims).expect("matching dims");
    let mask = build_sampling_mask(&space, &SamplingPlan::default()).expect("default plan");
    (space, truth, mask)
}
