use std::path::PathBuf;

use thiserror::Error;

use crate::model::{TestId, UnitId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("link error at {line}:{column}: {message}")]
    Link {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid snapshot {version}: {}", violations.join("; "))]
    SnapshotInvalid {
        version: String,
        violations: Vec<String>,
    },

    #[error("unknown test {0}")]
    UnknownTest(TestId),

    #[error("dependency delta covers unselected test {0}")]
    DeltaMismatch(TestId),

    #[error("probe {unit}#{index} does not resolve in the snapshot")]
    StaleProbe { unit: UnitId, index: u32 },

    #[error("corrupt store {}: {reason}", path.display())]
    CorruptStore { path: PathBuf, reason: String },

    #[error("incompatible store {}: {reason}", path.display())]
    IncompatibleStore { path: PathBuf, reason: String },

    #[error("store {} is locked by another writer", path.display())]
    StoreLocked { path: PathBuf },

    #[error("invalid history parameters: {0}")]
    Param(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
