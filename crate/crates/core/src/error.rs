use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error(
        "SVD did not converge after {sweeps} sweeps (largest off-diagonal cosine {off_diagonal:e})"
    )]
    Convergence { sweeps: usize, off_diagonal: f64 },

    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: &'static str },

    #[error("{}: bad ACTB {field}: {detail}", path.display())]
    Format {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("{}: payload is {actual} bytes, header declares {expected}", path.display())]
    Length {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("inconsistent calibration dump: {0}")]
    Consistency(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error at `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{} already exists (use --force to overwrite)", .0.display())]
    Exists(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 data/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Exists(_) | Error::UnsupportedDimension { .. } => 2,
            Error::Shape { .. }
            | Error::NonFinite { .. }
            | Error::Format { .. }
            | Error::Length { .. }
            | Error::Consistency(_)
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Domain(_) => 3,
            Error::Convergence { .. } | Error::DegenerateInput(_) | Error::Numerical(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
