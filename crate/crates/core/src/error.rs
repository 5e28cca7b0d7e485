use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error(
        "continued fraction did not converge after {iterations} iterations (x={x}, a={a}, b={b})"
    )]
    NonConvergence {
        iterations: usize,
        x: f64,
        a: f64,
        b: f64,
    },

    #[error("degenerate shell: gamma={gamma} is not below epsilon={epsilon}")]
    DegenerateShell { gamma: f64, epsilon: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero weight vector: decision boundary undefined")]
    ZeroWeights,

    #[error("training diverged at epoch {epoch}, batch {batch} (loss={loss})")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("non-finite score at perturbation sample {sample}")]
    NonFiniteScore { sample: usize },

    #[error("parse error at row {row}, column `{column}`: {msg}")]
    Parse {
        row: usize,
        column: String,
        msg: String,
    },

    #[error("non-binary label `{value}` at row {row}")]
    NonBinaryLabel { row: usize, value: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::NonConvergence { .. } => "non-convergence",
            Error::DegenerateShell { .. } => "degenerate-shell",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::ZeroWeights => "zero-weights",
            Error::Divergence { .. } => "divergence",
            Error::NonFiniteScore { .. } => "non-finite-score",
            Error::Parse { .. } => "parse",
            Error::NonBinaryLabel { .. } => "non-binary-label",
            Error::Data(_) => "data",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical divergence, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain { .. } | Error::DegenerateShell { .. } => 2,
            Error::Parse { .. }
            | Error::NonBinaryLabel { .. }
            | Error::Data(_)
            | Error::DimensionMismatch { .. }
            | Error::Json { .. } => 3,
            Error::Divergence { .. }
            | Error::NonConvergence { .. }
            | Error::NonFiniteScore { .. }
            | Error::ZeroWeights => 4,
            Error::Io { .. } => 5,
        }
    }
}
