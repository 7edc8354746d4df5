use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{routine} did not converge after {iterations} iterations")]
    NonConvergence {
        routine: &'static str,
        iterations: usize,
        /// Eigenvalues (or other partial output) obtained before giving up.
        partial: Vec<(f64, f64)>,
    },

    #[error("matrix is not Hurwitz: rightmost eigenvalue has real part {0:e}")]
    NotHurwitz(f64),

    #[error("gains do not satisfy Re mu_i < -|c|: rightmost eigenvalue of F1 has real part {0:e}")]
    GainsTooSlow(f64),

    #[error("pair is not controllable: {0}")]
    Uncontrollable(String),

    #[error("simulation diverged at t = {t} (|state| = {magnitude:e})")]
    Diverged { t: f64, magnitude: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
