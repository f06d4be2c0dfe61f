use thiserror::Error;

/// Errors raised by the geometry, shortening and reduction routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("point {point:?} lies outside the chart domain")]
    Domain { point: Vec<f64> },

    #[error("geodesic left the chart domain at parameter {parameter}")]
    DomainExit { parameter: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no connecting geodesic: {0}")]
    Connectivity(String),

    #[error("sampling too coarse: {0}; increase m")]
    Resolution(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("group is not finite within {bound} elements")]
    NotFinite { bound: usize },

    #[error("renormalization failed: {0}")]
    Renormalization(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
