use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic or malformed header.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version: {0}")]
    Version(String),

    /// Payload shorter (or longer) than the header claims.
    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document {doc_id:?} has token_count {found}, expected {expected} (bin grids differ)")]
    GridMismatch {
        doc_id: String,
        expected: usize,
        found: usize,
    },

    #[error("no documents selected for group {0:?}")]
    EmptyGroup(String),

    /// Non-positive power inside the fit window; carries the offending bin indices.
    #[error("non-positive power at bins {bins:?} inside fit window")]
    FitDomain { bins: Vec<usize> },

    #[error("fit window error: {0}")]
    Window(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// Wraps an error with the document that triggered it.
    #[error("document {doc_id:?} ({path}): {source}")]
    Document {
        doc_id: String,
        path: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code: 2 usage, 3 data/format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Window(_) => 2,
            Error::FitDomain { .. } | Error::Numeric(_) => 4,
            Error::Document { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn in_document(self, doc_id: &str, path: &str) -> Error {
        match self {
            e @ Error::Document { .. } => e,
            e => Error::Document {
                doc_id: doc_id.to_string(),
                path: path.to_string(),
                source: Box::new(e),
            },
        }
    }
}
