use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e}, largest {largest:e})")]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate biplot axis `{0}`: vector length is numerically zero")]
    DegenerateAxis(String),

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("column `{0}` not found in data")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column `{column}`: {message}")]
    Domain {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid block specification: {0}")]
    BlockSpec(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the input data or configuration rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::ZeroVariance(_)
                | Error::MissingColumn(_)
                | Error::NonNumeric { .. }
                | Error::MissingValue { .. }
                | Error::Domain { .. }
                | Error::BlockSpec(_)
                | Error::Data(_)
                | Error::Io { .. }
                | Error::Csv { .. }
                | Error::Parse { .. }
                | Error::InvalidArgument(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
