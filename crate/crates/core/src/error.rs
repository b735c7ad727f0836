use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two particles occupy the same point; the state is outside the
    /// configuration set on which the dynamics is defined.
    #[error("state left the admissible set: particles {i} and {j} coincide")]
    Coincident { i: usize, j: usize },

    #[error("drift produced coincident particles {i} and {j}; reduce the step size h")]
    StepCollision { i: usize, j: usize },

    #[error("integration failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("alignment violated: pair ({i}, {j}) has X_ij·U_ij = {value:e}")]
    Alignment { i: usize, j: usize, value: f64 },

    #[error("no admissible σ found below σ_max = {sigma_max:e}: {detail}")]
    NoAdmissibleSigma { sigma_max: f64, detail: String },

    #[error("grid does not cover particle {index} at t = {t}")]
    Uncovered { t: f64, index: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for failures caused by the state leaving the admissible set,
    /// as opposed to invalid input.
    pub fn is_collision(&self) -> bool {
        match self {
            Error::Coincident { .. } | Error::StepCollision { .. } => true,
            Error::StepFailed { source, .. } => source.is_collision(),
            _ => false,
        }
    }
}
