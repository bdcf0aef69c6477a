use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PanError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operator parameter is out of its admissible range.
    #[error("parameter error in {op}: {detail}")]
    Parameter { op: &'static str, detail: String },

    /// An input value lies outside the mathematical domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A caller broke an API contract (e.g. backward from a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Config text could not be parsed; `line` is 1-based.
    #[error("config line {line}: {detail}")]
    ConfigLine { line: usize, detail: String },

    /// Binary file failed to parse at the given byte offset.
    #[error("parse error in {what} at byte {offset}: {detail}")]
    Parse { what: &'static str, offset: usize, detail: String },

    /// A NaN or infinity showed up during training.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PanError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        PanError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PanError::Io { path: path.into(), source }
    }
}
