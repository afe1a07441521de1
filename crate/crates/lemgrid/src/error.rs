//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported network structure.
    #[error("network topology: {0}")]
    Topology(String),

    /// Input file could not be parsed; points at the offending line.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// The power-flow fixed point did not converge.
    #[error("power flow diverged after {iterations} iterations (residual {residual:.3e} pu)")]
    Diverged { iterations: usize, residual: f64 },

    /// A linear system needed by the sensitivity engine is singular.
    #[error("singular system: {0}")]
    Singular(String),

    /// Sensitivity coefficients were computed for a different operating point.
    #[error(
        "stale sensitivity coefficients: operating point has changed since they were computed"
    )]
    StaleSensitivity,

    /// A voltage magnitude collapsed to (near) zero, so magnitude
    /// sensitivities are undefined.
    #[error("voltage magnitude at node {0} is degenerate (|V| ~ 0)")]
    DegenerateVoltage(usize),

    /// Order submitted outside the trading window or into a foreign slot.
    #[error("market is closed (order slot {order_slot}, book slot {book_slot})")]
    MarketClosed { order_slot: usize, book_slot: usize },

    /// Order rejected before matching (bad quantity, bad price, blocked
    /// seller, ...).
    #[error("order rejected: {0}")]
    BadOrder(String),

    /// Configuration or input data fails a consistency check.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
