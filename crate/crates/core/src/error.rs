use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite moment or jacobian value at record {record}")]
    NumericDomain { record: usize },

    #[error("non-finite value encountered while evaluating {what}")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid record {record}: {reason}")]
    InvalidRecord { record: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular Newton system (condition number {condition_number:.3e}){}", fmt_leave_out(*leave_out))]
    SingularSystem {
        condition_number: f64,
        leave_out: Option<usize>,
    },

    #[error("rank-deficient {what} (condition number {condition_number:.3e})")]
    RankDeficient {
        what: &'static str,
        condition_number: f64,
    },

    #[error("jackknife undefined: leave-one-out solves failed at indices {failed:?}")]
    JackknifeUndefined { failed: Vec<usize> },

    #[error("overlap violation at record {record}: propensity {propensity}")]
    OverlapViolation { record: usize, propensity: f64 },

    #[error("degenerate leverage {leverage} at record {record}")]
    DegenerateLeverage { record: usize, leverage: f64 },

    #[error(
        "solver did not converge after {iterations} iterations (residual {residual_norm:.3e})"
    )]
    NotConverged {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("unreliable bootstrap variance: {failures} of {replicates} replicates failed")]
    UnreliableVariance { failures: usize, replicates: usize },
}

fn fmt_leave_out(leave_out: Option<usize>) -> String {
    match leave_out {
        Some(i) => format!(" with record {i} left out"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a leave-out index to solver failures.
    pub(crate) fn with_leave_out(self, index: usize) -> Self {
        match self {
            Error::SingularSystem {
                condition_number, ..
            } => Error::SingularSystem {
                condition_number,
                leave_out: Some(index),
            },
            other => other,
        }
    }
}
