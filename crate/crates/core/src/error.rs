use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("index {index} out of range for {bound} ({what})")]
    Index {
        what: String,
        index: usize,
        bound: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("spectrum contains a zero eigenvalue at index {0}")]
    SingularSpectrum(usize),
    #[error("patch size {p} exceeds node count {n}")]
    Size { p: usize, n: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("stale or mismatched tape: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}
pub(crate) use shape_err;
