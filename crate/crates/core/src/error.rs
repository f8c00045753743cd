use std::io;

use thiserror::Error;

/// Every failure the engine can report.
///
/// Variants fall into four families which map onto process exit codes:
/// input problems (1), configuration problems (2) and numeric failures (3).
/// Contract violations are programming errors and also map to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("softmax slice {row} is fully masked")]
    DegenerateMask { row: usize },

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Input { line: Option<usize>, msg: String },

    #[error("unknown product id {0}")]
    UnknownProduct(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn input(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Input {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Short machine-parsable code for the error family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::DegenerateMask { .. } => "E_MASK",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Contract(_) => "E_CONTRACT",
            Error::Input { .. } => "E_INPUT",
            Error::UnknownProduct(_) => "E_UNKNOWN_PRODUCT",
            Error::Config(_) => "E_CONFIG",
            Error::Format { .. } => "E_FORMAT",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Io(_) => "E_IO",
        }
    }

    /// Process exit code: 1 input, 2 configuration, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input { .. }
            | Error::UnknownProduct(_)
            | Error::Format { .. }
            | Error::Io(_) => 1,
            Error::Config(_) | Error::Contract(_) | Error::Shape { .. } => 2,
            Error::NonFinite { .. }
            | Error::DegenerateMask { .. }
            | Error::Degenerate(_)
            | Error::Diverged { .. } => 3,
        }
    }
}
