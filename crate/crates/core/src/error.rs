//! Error type shared by the whole crate.

use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

/// All failures surfaced by this crate.
#[derive(Debug)]
pub enum Error {
    /// A numeric argument is outside its mathematical domain
    /// (non-finite parameter, probability outside [0, 1], zero samples).
    Domain(String),
    /// Caller broke an API contract: mismatched lengths, shapes, or a
    /// cache that does not belong to the network/batch it is used with.
    Contract(String),
    /// A request would exceed a hard resource guard (e.g. exhaustive
    /// enumeration over too many gates).
    Guard(String),
    /// A file or byte stream does not match its expected format.
    Format(String),
    /// Training aborted because the objective became non-finite.
    Diverged {
        epoch: usize,
        step: usize,
        value: f64,
    },
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Guard(msg) => write!(f, "resource guard: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Diverged { epoch, step, value } => write!(
                f,
                "training diverged at epoch {epoch}, step {step}: objective = {value}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
