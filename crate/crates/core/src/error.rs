use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("singular mixer: diagonal entry {index} is zero")]
    SingularMixer { index: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss} ({detail})")]
    Training {
        epoch: usize,
        step: usize,
        loss: f64,
        detail: String,
    },
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint migration error: {0}")]
    Migration(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
