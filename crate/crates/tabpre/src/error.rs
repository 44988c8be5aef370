use thiserror::Error;

/// Error type shared across the whole pipeline.
#[derive(Debug, Error)]
pub enum TabError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("optimizer error: {0}")]
    Optim(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("objective error: {0}")]
    Objective(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
