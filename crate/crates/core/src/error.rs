use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column `{column}` is constant and cannot be standardized")]
    ConstantColumn { column: String },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("gibbs sampler failed at iteration {iteration}: {source}\n{state_dump}")]
    SamplerFailure {
        iteration: usize,
        state_dump: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no posterior draws to summarize")]
    EmptyDraws,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether the failure is numerical rather than a data or usage problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Domain(_) | Error::NotPositiveDefinite { .. } | Error::SamplerFailure { .. } => {
                true
            }
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Whether the failure stems from the input data.
    pub fn is_data(&self) -> bool {
        match self {
            Error::ConstantColumn { .. }
            | Error::Parse { .. }
            | Error::MissingColumn(_)
            | Error::InvalidData(_)
            | Error::ColumnMismatch(_)
            | Error::Csv { .. }
            | Error::Io { .. }
            | Error::EmptyDraws => true,
            Error::Stage { source, .. } => source.is_data(),
            _ => false,
        }
    }
}
