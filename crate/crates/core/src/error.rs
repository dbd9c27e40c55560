//! Crate-wide error type.
//!
//! One enum covers every failure the algorithms can report; the CLI maps the
//! variants onto process exit codes. Hand-rolled rather than derived so the
//! crate builds without `std`.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// All errors produced by this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A function was called with values that violate its preconditions
    /// (shape mismatches, out-of-range timesteps, invalid labels).
    Argument(String),
    /// A configuration struct failed validation before any work started.
    Config(String),
    /// Training diverged; `epoch` is the first epoch whose loss was not finite.
    Training { epoch: usize, message: String },
    /// A numerical invariant failed at run time (non-finite values where
    /// finite ones are guaranteed).
    Numerical(String),
}

impl Error {
    /// Shorthand for [`Error::Argument`].
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Shorthand for [`Error::Config`].
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Training { epoch, message } => {
                write!(f, "training failed at epoch {epoch}: {message}")
            }
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
