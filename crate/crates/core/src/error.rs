use std::path::PathBuf;

use thiserror::Error;

use crate::data::LocationId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("schema error: unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("schema error: feature `{feature}`: {reason}")]
    InvalidFeature { feature: String, reason: String },

    #[error("parse error at row {row}, column `{column}`: cannot parse `{token}`")]
    Parse { row: usize, column: String, token: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("location {0} has no fitted model")]
    UnmodeledLocation(LocationId),

    #[error("missing rent for location {0}")]
    MissingRent(LocationId),

    #[error("no location has enough rows to fit a model (minimum {min_rows})")]
    NoModelableLocations { min_rows: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) | Error::UnknownFeature(_) | Error::InvalidFeature { .. } => {
                "schema"
            }
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::UnmodeledLocation(_) => "unmodeled_location",
            Error::MissingRent(_) => "missing_rent",
            Error::NoModelableLocations { .. } => "no_models",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
