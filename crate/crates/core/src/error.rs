use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible. The message names every shape involved.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("bad magic: expected \"TADTW1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("weight file truncated while reading {0}")]
    Truncated(String),

    #[error("layer {layer}: dims {found:?} do not match expected {expected:?}")]
    LayerShape {
        layer: String,
        expected: [u32; 4],
        found: [u32; 4],
    },

    #[error("layer order mismatch: expected {expected}, found {found}")]
    LayerOrder { expected: String, found: String },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure comes from the filesystem or image codecs rather
    /// than from the content of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Image { .. })
    }
}
