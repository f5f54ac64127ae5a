use thiserror::Error;

/// Errors produced by the simulator, optimizer and estimation loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid chain, pulse or optimizer parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Request exceeds the memory guard of a brute-force routine.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Non-finite values or an out-of-range Bloch vector.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller violated a documented precondition (unnormalized state, missing data).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The SLD has a vanishing Bloch part, so the measurement carries no information.
    #[error("degenerate measurement: |v| = {norm:e}")]
    DegenerateMeasurement { norm: f64 },

    /// The estimation protocol cannot proceed.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A closed-form expression was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Resource(_) => "resource",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::DegenerateMeasurement { .. } => "degenerate_measurement",
            Error::Protocol(_) => "protocol",
            Error::Domain(_) => "domain",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
