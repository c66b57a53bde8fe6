use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{what} index {index} out of range (bound {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("vehicles in contact (gap {gap} m); collision must be handled before querying the controller")]
    Contact { gap: f64 },

    #[error("episode failed at scenario {scenario}, fault value {row}, injection step {col}: {source}")]
    Episode {
        scenario: usize,
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("numerical failure in sweep {sweep}: {detail}")]
    Numerical { sweep: usize, detail: String },

    #[error("shift constant {shift} does not make the minimum observed value {min_observed} positive")]
    InsufficientShift { shift: f64, min_observed: f64 },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("WMAPE undefined: sum of |truth| over the evaluation set is zero")]
    UndefinedWmape,

    #[error("empty training set")]
    EmptyTraining,

    #[error("acceleration rate undefined: model time must be positive, got {0} s")]
    ZeroModelTime(f64),

    #[error("unknown sweep parameter `{0}` (expected rank, lambda1, lambda2 or lambda3)")]
    SweepParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
