use std::path::PathBuf;

/// Errors raised across the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("index {index} at position {position} is out of range (limit {limit})")]
    OutOfRange {
        position: usize,
        index: usize,
        limit: usize,
    },

    #[error("unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { position: usize, symbol: char },

    #[error("utterance {id} has {frames} frames but the encoder needs at least {required}")]
    TooShort {
        id: String,
        frames: usize,
        required: usize,
    },

    #[error("batch normalization needs at least 2 samples per feature in train mode, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("score {score} of {query} in {utterance} is outside [0, 1]")]
    ScoreRange {
        query: String,
        utterance: String,
        score: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: bad header: {detail}")]
    BadHeader { path: PathBuf, detail: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: configuration fingerprint mismatch")]
    Fingerprint { path: PathBuf },

    #[error("{path}: file truncated while reading {what}")]
    Truncated { path: PathBuf, what: String },

    #[error("{path}: missing tensor {name}")]
    MissingTensor { path: PathBuf, name: String },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("utterance {id}: {detail}")]
    OutsideUtterance { id: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
