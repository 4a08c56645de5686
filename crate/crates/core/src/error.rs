use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (dimension mismatch, label out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// Malformed binary or text input.
    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for returning a [`Error::Contract`].
macro_rules! contract {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Contract(format!($($arg)*)))
    };
}
pub(crate) use contract;

/// Shorthand for a precondition check.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            $crate::error::contract!($($arg)*);
        }
    };
}
pub(crate) use ensure;
