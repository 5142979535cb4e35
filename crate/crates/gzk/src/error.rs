use thiserror::Error;

/// Crate-wide error type.
///
/// Variants distinguish domain violations (bad mathematical input), caller
/// configuration mistakes, data ingestion problems (with line numbers), and
/// numerical failures (overflow, positive-definiteness violations, singular
/// solves) so the CLI can map them to actionable messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at line {line}: {msg}")]
    Ingestion { line: usize, msg: String },

    #[error("integer overflow computing {0}")]
    Overflow(String),

    #[error("kernel is not positive definite: Gegenbauer coefficient {index} = {value:.6e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        // keep io::Error causes in the Io variant so exit-code mapping stays
        // uniform; everything else is a malformed file
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
