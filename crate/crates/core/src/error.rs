use thiserror::Error;

/// Errors raised by the library. All of them are domain errors for the CLI.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("incompatible variable spaces: {0}")]
    IncompatibleSpaces(String),
    #[error("not a polynomial: {0}")]
    NonPolynomial(String),
    #[error("no split up to degree {degree}: {reason}")]
    NoSplit { degree: i64, reason: String },
    #[error("ambiguous split: branch count exceeded cap {cap}")]
    Ambiguous { cap: usize },
    #[error("not expressible in the generators: {0}")]
    NotExpressible(String),
    #[error("ideal splits into invariant factors {partition:?}")]
    SplitsInvariantly { partition: Vec<Vec<usize>> },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid normal form: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
