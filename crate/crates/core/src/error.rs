//! Error types. [`ConfigError`] covers configuration parsing and validation;
//! [`Error`] covers everything that can go wrong once a run is underway.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter is outside its allowed range.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// Analyzer settings passed for the wrong channel.
    #[error("analyzer settings must cover the signal and idler channels exactly once")]
    ChannelMismatch,

    /// An acquisition was requested with zero gates.
    #[error("acquisition requires at least one gate")]
    ZeroGates,

    /// Fringe fit input is unusable (too few points, span below one period,
    /// or a singular design matrix).
    #[error("degenerate fringe fit: {0}")]
    DegenerateFit(String),

    /// The fit ran but did not produce a usable optimum.
    #[error("fringe fit did not converge: {0}")]
    FitNotConverged(String),

    /// A CHSH evaluation is missing one of the required analyzer settings.
    #[error("missing CHSH setting ({theta_signal}, {theta_idler}) deg")]
    MissingSetting { theta_signal: f64, theta_idler: f64 },

    /// A correlation value was requested from records with no counts.
    #[error("correlation undefined: total counts are not positive")]
    ZeroCounts,

    /// Malformed serialized record.
    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

/// Configuration errors carry enough position information for a CLI to point
/// at the offending line or field.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("config field `{field}`: {message}")]
    Value { field: String, message: String },

    #[error("missing required config field `{field}`")]
    Missing { field: String },

    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    pub fn value(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Value {
            field: field.into(),
            message: message.into(),
        }
    }
}
