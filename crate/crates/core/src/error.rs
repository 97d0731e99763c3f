use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input to an operation: out-of-range index, wrong length, loss outside its range.
    #[error("invalid input: {0}")]
    Input(String),

    /// A constructor or forecaster parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("the legal set is empty")]
    EmptyLegalSet,

    /// An exhaustive oracle refused to run because the instance exceeds its cap.
    #[error("{what} needs {needed} items, above the cap of {cap}; use the lattice instead")]
    CapExceeded { what: &'static str, needed: f64, cap: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
