use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("uv island packing failed: {0}")]
    Packing(String),

    #[error("part {0} received no texels")]
    EmptyPart(usize),

    #[error("camera leaves too many vertices outside the image ({inside} of {total} inside)")]
    CameraFraming { inside: usize, total: usize },

    #[error("under-determined IK: {visible} visible joints, need at least {required}")]
    UnderDetermined { visible: usize, required: usize },

    #[error("batch norm needs at least two examples in train mode, got {0}")]
    BatchTooSmall(usize),

    #[error("backward pass requires a train-mode forward cache")]
    ModeMismatch,

    #[error("network has not been trained")]
    Untrained,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("bad magic bytes in tensor container")]
    BadMagic,

    #[error("tensor container truncated: {0}")]
    Truncated(String),

    #[error("tensor container checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported element type code {0}")]
    ElementType(u8),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png export: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch { expected: expected.to_string(), got: got.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
