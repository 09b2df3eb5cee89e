use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("box [{x1}, {y1}, {x2}, {y2}] lies entirely outside the {width}x{height} image")]
    OutsideImage {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: u32,
        height: u32,
    },

    #[error("scaling by {factor} produced a zero-area box after clipping")]
    DegenerateScale { factor: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("codebook error: {0}")]
    Codebook(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("non-finite component at index {0}")]
    NonFinite(usize),

    #[error("embedding cache: {0}")]
    Cache(String),

    #[error("embedding cache has no entry for id {0:?}")]
    CacheMiss(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("prompt template: unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),

    #[error("prompt template: {0}")]
    Template(String),

    #[error("prompt context is missing field {0}")]
    MissingField(&'static str),

    #[error("scene kind mismatch: template is {template}, context is {context}")]
    SceneMismatch { template: String, context: String },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("HTTP status {status} after {attempts} attempt(s)")]
    HttpStatus { status: u16, attempts: u32 },

    #[error("malformed response body: {0}")]
    Decode(String),

    #[error("model returned an empty completion")]
    EmptyCompletion,

    #[error("could not parse a category from model output: {raw:?}")]
    UnparseableAnswer { raw: String },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("swap set: {0}")]
    SwapSet(String),

    #[error("dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}
