use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A slice handed to the library had the wrong length.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite dynamics at t = {t} (stage {stage})")]
    NonFiniteDynamics { t: f64, stage: usize },

    /// Repeated rejection drove the step below the resolvable floor.
    #[error("step size underflow at t = {t} (dt = {dt:e}); problem may be stiff")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("exceeded {max_steps} step attempts at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("backward pass: {0}")]
    Backward(Box<Error>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn backward(self) -> Self {
        match self {
            e @ Error::Backward(_) => e,
            e => Error::Backward(Box::new(e)),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
