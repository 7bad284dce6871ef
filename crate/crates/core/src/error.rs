use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} lies outside the chart bounds")]
    OutOfBounds(Vec<f64>),
    #[error("metric is not positive definite at {0:?}")]
    NotPositiveDefinite(Vec<f64>),
    #[error("jet order {have} is insufficient, {need} required")]
    InsufficientOrder { have: usize, need: usize },
    #[error("identity `{id}` needs a soliton chart but max|phi| = {phi:.3e}")]
    NotSoliton { id: String, phi: f64 },
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("rank mismatch: {0}")]
    Rank(String),
    #[error("representation mismatch: {0}")]
    Representation(String),
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("solvability violated: {0}")]
    Solvability(String),
    #[error("flow failure: {0}")]
    Flow(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
