use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("inference error: {0}")]
    Inference(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("explain error: {0}")]
    Explain(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
