use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("request times must be strictly increasing: request {id} at {time} follows {prev}")]
    NonMonotoneTimes { id: usize, prev: f64, time: f64 },
    #[error("trace must start with the dummy request at server 1, time 0")]
    BadDummy,
    #[error("server {server} out of range 1..={n}")]
    ServerOutOfRange { server: usize, n: usize },
    #[error("request {id} has invalid time {time}")]
    BadTime { id: usize, time: f64 },
    #[error("request at position {position} carries id {id}")]
    BadRequestId { position: usize, id: usize },
    #[error("transfer cost must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("storage rate of server {server} must be positive and finite, got {rate}")]
    BadRate { server: usize, rate: f64 },
    #[error("this operation requires unit storage rate at every server")]
    NonUniformRates,
    #[error("expected {expected} predictions, got {got}")]
    PredictionCount { expected: usize, got: usize },
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("beta must be non-negative, got {0}")]
    BadBeta(f64),
    #[error("storage rates must be sorted in ascending order of server index")]
    UnsortedRates,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy violation at t={time}: {reason}")]
    PolicyViolation { time: f64, reason: String },
    #[error("time regression: requested {requested}, clock at {clock}")]
    TimeRegression { requested: f64, clock: f64 },
}

impl EngineError {
    pub(crate) fn violation(time: f64, reason: impl Into<String>) -> Self {
        EngineError::PolicyViolation { time, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("log does not follow the predictive replication structure: {0}")]
    StructureMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OfflineError {
    #[error("offline optimum requires unit storage rates")]
    UnsupportedRates,
    #[error("exact subset dynamic program supports at most {max} servers, trace has {n}")]
    TooManyServers { n: usize, max: usize },
    #[error("brute-force oracle supports n <= {max_n} and m <= {max_m}; got n={n}, m={m}")]
    InstanceTooLarge { n: usize, m: usize, max_n: usize, max_m: usize },
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
    #[error("invalid generator parameter: {0}")]
    BadParameter(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("no read requests left after filtering")]
    EmptyAfterFilter,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
