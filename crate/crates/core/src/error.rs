use thiserror::Error;

use crate::domain::DifficultyTier;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("schema error: field `{0}`")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unknown category path `{0}`")]
    UnknownCategory(String),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Schema(String),
    #[error("no replay fixture for request {0}")]
    MissingFixture(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingKey(String),
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
}

impl ProviderError {
    /// Transport failures and 5xx responses are retried; everything else is
    /// final.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => (500..=599).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("embedding provider failed while scoring {context}: {source}")]
    Embedding {
        context: String,
        #[source]
        source: ProviderError,
    },
    #[error("irrelevant sample `{0}` has no paired relevant sample to supply the negative reference")]
    MissingPair(String),
}

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("response is not in the candidate alphabet: {0:?}")]
    UnknownResponse(String),
    #[error("alphabet mismatch: {left} vs {right} candidates")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("LLM response did not match the expected schema: {0}")]
    LlmSchema(String),
    #[error("no valid categories; unknown paths: {0:?}")]
    UnknownCategory(Vec<String>),
    #[error("generated bundle does not echo the plan: {0}")]
    PlanMismatch(String),
    #[error("generated bundle is missing tier `{0}`")]
    MissingTier(DifficultyTier),
    #[error("sample is not eligible: {0}")]
    Ineligible(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("missing predictions for sample ids: {0:?}")]
    MissingPrediction(Vec<String>),
    #[error("duplicate prediction for sample id `{0}`")]
    DuplicatePrediction(String),
    #[error("predictions reference unknown sample ids: {0:?}")]
    UnknownPrediction(Vec<String>),
    #[error("judge response did not match the expected schema: {0}")]
    LlmSchema(String),
    #[error("judge score {0} is outside [0, 5]")]
    OutOfRange(f64),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}
