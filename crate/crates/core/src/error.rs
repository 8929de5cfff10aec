use std::path::PathBuf;

/// Errors produced by the ndtmc pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scan {path}: {len} bytes is not a multiple of 16")]
    MalformedScan { path: PathBuf, len: u64 },

    #[error("pose file line {line}: {message}")]
    PoseParse { line: usize, message: String },

    #[error("invalid pose (frame {frame_index}): {message}")]
    InvalidPose { frame_index: usize, message: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("descriptor database is empty")]
    EmptyDatabase,

    #[error("descriptor database index has not been built")]
    IndexNotBuilt,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("frame {found} arrived after frame {previous}; poses must be in trajectory order")]
    OutOfOrder { previous: usize, found: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a malformed or incompatible binary file.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Corrupt(_)
                | Error::MalformedScan { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
