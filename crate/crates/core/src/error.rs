use thiserror::Error;

use crate::embedding_io::EmbeddingIoError;
use crate::fd::FdError;
use crate::measures::MeasureError;
use crate::refembed::EmbedError;
use crate::table::TableError;
use crate::variants::VariantError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for pipeline runs.
///
/// Input problems (tables, embeddings, parameters) are kept apart from
/// numeric failures so drivers can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    EmbeddingIo(#[from] EmbeddingIoError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True when the failure happened while computing a measure rather than
    /// while reading or validating inputs.
    pub fn is_measure_failure(&self) -> bool {
        matches!(self, Error::Measure(_))
    }
}
