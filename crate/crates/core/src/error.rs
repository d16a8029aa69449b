use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate mask: mask sums to zero")]
    DegenerateMask,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("inverse-depth metric undefined: prediction {value} <= 0 at pixel ({u}, {v})")]
    InverseDomain { u: usize, v: usize, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed file: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{}: payload length {actual} bytes, expected {expected}", path.display())]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("value {value} out of range: {message}")]
    Range { value: f64, message: String },

    #[error("bad checkpoint magic: {0:?}")]
    Magic(Vec<u8>),

    #[error("tensor `{name}`: shape {found:?} does not match expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
