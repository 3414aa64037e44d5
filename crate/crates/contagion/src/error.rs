//! Error type shared across the library.

use thiserror::Error;

/// Everything that can go wrong while loading data, validating inputs,
/// or integrating the dynamics.
#[derive(Debug, Error)]
pub enum ContagionError {
    /// A file could not be parsed. Carries the file name and 1-based line
    /// number so the message is directly actionable.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Structurally well-formed input that violates a model invariant
    /// (negative holdings, inconsistent equity identity, duplicate ids, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A bank id was referenced that does not exist in the network.
    #[error("unknown bank id: {0}")]
    UnknownBank(String),

    /// A shock specification that cannot be applied (e.g. relative size <= -1,
    /// or the target bank has already failed).
    #[error("invalid shock: {0}")]
    Shock(String),

    /// Integrator or analysis configuration out of range.
    #[error("invalid config: {0}")]
    Config(String),

    /// A state variable became non-finite during integration. Reports which
    /// variable and at what simulation time.
    #[error("integration: non-finite {var} at t = {t}")]
    NonFinite { var: String, t: f64 },

    /// All banks (or all assets) were pruned away during load.
    #[error("empty network: {0}")]
    EmptyNetwork(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ContagionError>;
