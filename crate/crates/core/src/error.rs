use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("duplicate item id {0}")]
    DuplicateItem(u64),

    #[error("none of the {skipped} trigger(s) are known to the snapshot")]
    EmptyTriggers { skipped: usize },

    #[error("delta snapshot is paired with full snapshot {delta_full_id}, current full is {full_id}")]
    SnapshotMismatch { full_id: u64, delta_full_id: u64 },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Failures while decoding a snapshot or checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected file kind {found} (wanted {expected})")]
    UnexpectedKind { expected: u8, found: u8 },

    #[error("file truncated")]
    Truncated,

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed section: {0}")]
    Malformed(String),
}
