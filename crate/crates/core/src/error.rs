use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node id {0} is out of range")]
    InvalidNode(u32),

    #[error("relation id {0} is out of range")]
    InvalidRelation(u16),

    #[error("unknown relation name `{0}`")]
    UnknownRelation(String),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    /// One of the two classes has no members where both are required.
    #[error("degenerate label distribution: {0}")]
    DegenerateLabels(String),

    /// Every propagated bag came out empty.
    #[error("relation `{0}` leads to a dead end: every propagated bag is empty")]
    DeadEnd(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidNode(_)
            | Error::InvalidRelation(_)
            | Error::UnknownRelation(_)
            | Error::Usage(_) => 1,
            Error::Data(_) | Error::DegenerateLabels(_) | Error::DeadEnd(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}
