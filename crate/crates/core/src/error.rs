use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{coordinate} = {value} is outside the region bounds [{lower}, {upper}]")]
    OutOfRegion {
        coordinate: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss {value} (timesteps {timesteps:?})")]
    NonFiniteLoss { value: f64, timesteps: Vec<usize> },

    #[error("sampler diverged at t = {t}")]
    SamplerDivergence { t: usize },

    #[error("training diverged at step {step}; last good checkpoint: {last_good:?}")]
    Diverged {
        step: usize,
        last_good: Option<PathBuf>,
    },

    #[error("external picker failed: {0}")]
    Picker(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
