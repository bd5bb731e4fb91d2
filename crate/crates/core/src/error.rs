use thiserror::Error;

/// Errors raised by the projlab operations.
///
/// The variants follow the failure classes of the experiments: bad inputs
/// (`Domain`, `Config`, `Range`), numerical trouble, and experiments that are
/// well posed but cannot be carried out (`Infeasible`, `Capacity`).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("inconsistent input: {0}")]
    Inconsistency(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
            Error::Infeasible(_) => "infeasible",
            Error::Capacity(_) => "capacity",
            Error::Config(_) => "config",
            Error::Range(_) => "range",
            Error::Inconsistency(_) => "inconsistency",
            Error::Precondition(_) => "precondition",
            Error::Geometry(_) => "geometry",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
