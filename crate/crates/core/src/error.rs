use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {t} s is outside the profile span [0, {span}) s")]
    OutOfRange { t: f64, span: f64 },

    #[error("channel {channel} stream is not time-sorted at index {index}")]
    Unsorted { channel: u8, index: usize },

    #[error("fit not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("normal matrix is rank deficient along {direction}")]
    RankDeficient { direction: String },

    #[error("branch centre {omega} rad/s sits on a fringe extremum; branch is ambiguous")]
    AmbiguousBranch { omega: f64 },

    #[error("no signal: fringe amplitude is zero")]
    NoSignal,

    #[error("{failed} of {total} refits failed (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("inconsistent inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Validation = 2,
    Parse = 3,
    Convergence = 4,
    Io = 5,
}

impl Error {
    pub fn class(&self) -> ExitClass {
        match self {
            Error::Parse { .. } => ExitClass::Parse,
            Error::NotConverged(_) | Error::TooManyFailures { .. } | Error::NotIdentifiable(_) | Error::RankDeficient { .. } => {
                ExitClass::Convergence
            }
            Error::Io(_) => ExitClass::Io,
            _ => ExitClass::Validation,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {value}")))
    }
}

pub(crate) fn check_nonnegative(name: &'static str, value: f64) -> Result<()> {
    check_finite(name, value)?;
    if value < 0.0 {
        return Err(Error::invalid(name, format!("must be >= 0, got {value}")));
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    check_finite(name, value)?;
    if value <= 0.0 {
        return Err(Error::invalid(name, format!("must be > 0, got {value}")));
    }
    Ok(())
}
