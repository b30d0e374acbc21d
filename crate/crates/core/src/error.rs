use thiserror::Error;

use crate::kernel::LogisticFit;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised while binding data or running an estimator.
///
/// Variants split into two families: data/validation problems
/// (see [`Error::is_numerical`]) and numerical failures of a fit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("non-binary {role}: column `{column}` row {row} has value {value}")]
    NonBinary {
        role: &'static str,
        column: String,
        row: usize,
        value: String,
    },

    #[error("missing/non-finite {role}: column `{column}` row {row}")]
    NonFinite {
        role: &'static str,
        column: String,
        row: usize,
    },

    #[error("length mismatch: column `{column}` has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },

    #[error("empty {role} arm: no rows with {role} = {level}")]
    EmptyArm { role: &'static str, level: u8 },

    #[error("empty cell: no rows with T = {t}, S = {s}")]
    EmptyCell { t: u8, s: u8 },

    #[error("single-level moderator within treatment subset T = {treatment}")]
    SingleLevelModerator { treatment: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("insufficient rows: {rows} rows for {params} parameters")]
    InsufficientRows { rows: usize, params: usize },

    #[error("cluster-robust variance requested without cluster labels")]
    MissingClusters,

    #[error("perfect or quasi-complete separation in logistic fit")]
    Separation { partial: Box<LogisticFit> },

    #[error("degenerate outcome variance")]
    DegenerateOutcome,

    #[error("iteration did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("propensity score {value} at row {row} outside ({lower}, {upper}) with trimming disabled")]
    PropensityOutOfBounds {
        row: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("fit failed in treatment subset T = {treatment}: {source}")]
    Subset {
        treatment: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("level curve undefined: unadjusted estimate is zero")]
    UndefinedLevelCurve,

    #[error("no bracket found for any alpha value")]
    NoBracket,

    #[error("all estimators failed on all {reps} replications")]
    AllReplicationsFailed { reps: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::Separation { .. }
            | Error::DegenerateOutcome
            | Error::NotConverged { .. }
            | Error::UndefinedLevelCurve
            | Error::NoBracket
            | Error::AllReplicationsFailed { .. } => true,
            Error::Subset { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
