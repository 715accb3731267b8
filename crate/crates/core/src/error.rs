use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the monitor pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:.3e})")]
    Convergence {
        iterations: usize,
        violation: f64,
        /// Best dual iterate reached before giving up.
        best_alphas: Vec<f64>,
    },

    #[error("grid search failed in every trial: {}", .0.join("; "))]
    GridSearch(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate mixture fit: {0}")]
    DegenerateFit(String),

    #[error("component selection failed for every K: {}", .0.join("; "))]
    Selection(Vec<String>),

    #[error("flow training failed: {0}")]
    Train(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::Data(_) => "DataError",
            Error::Io { .. } => "IoError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::Shape { .. } => "ShapeError",
            Error::Parameter(_) => "ParameterError",
            Error::Convergence { .. } => "ConvergenceError",
            Error::GridSearch(_) => "GridSearchError",
            Error::Numerical(_) => "NumericalError",
            Error::DegenerateFit(_) => "DegenerateFitError",
            Error::Selection(_) => "SelectionError",
            Error::Train(_) => "TrainError",
            Error::Metric(_) => "MetricError",
        }
    }

    /// True for failures caused by the caller's input rather than by the numerics.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Data(_)
                | Error::Io { .. }
                | Error::DegenerateInput(_)
                | Error::Shape { .. }
                | Error::Parameter(_)
                | Error::Metric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
