use thiserror::Error;

pub type Result<T> = std::result::Result<T, MheError>;

#[derive(Debug, Error)]
pub enum MheError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<usize> },

    #[error("matrix {0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver failed at iteration {iteration}: {reason}")]
    Solver { iteration: usize, reason: String },

    #[error("window solve over t = {start}..{end} failed: {source}")]
    Window {
        start: usize,
        end: usize,
        #[source]
        source: Box<MheError>,
    },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("no contraction within horizon cap {0}")]
    NoContraction(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("record format error: {0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(MheError::Dimension {
            context: context.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}
