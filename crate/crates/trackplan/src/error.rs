//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The equality-constrained QP system cannot be factorized. Carries the
    /// numerical rank of the equality constraint matrix so rank deficiency is
    /// visible in the message.
    #[error("singular KKT system: equality constraints have rank {rank} of {rows} rows")]
    SingularKkt { rank: usize, rows: usize },

    /// A solver iterate went NaN/Inf. Names the iteration and the update
    /// stage that produced it.
    #[error("non-finite iterate at iteration {iteration} during {stage}")]
    NonFinite { iteration: usize, stage: &'static str },

    #[error("no finite-cost candidate among {candidates} samples")]
    NoViableCandidate { candidates: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: mean loss {loss:.3e} exceeds 10x the initial {initial:.3e}")]
    TrainingDiverged { epoch: usize, loss: f64, initial: f64 },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("malformed log: {0}")]
    MalformedLog(String),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
