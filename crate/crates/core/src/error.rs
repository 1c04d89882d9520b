use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library, tagged by the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(String),

    #[error("data: {path}: {msg}")]
    File { path: PathBuf, msg: String },

    #[error("quantize: {0}")]
    Quantize(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("vcbart: {0}")]
    Vcbart(String),

    #[error("car: {0}")]
    Car(String),

    #[error("fixed effects: {0}")]
    FixedEffects(String),

    #[error("posterior: {0}")]
    Posterior(String),

    #[error("simlab: {0}")]
    Simlab(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
