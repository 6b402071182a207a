use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("query budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted { requested: u64, remaining: u64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("victim build failed: {0}")]
    Build(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
