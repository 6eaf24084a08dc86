//! Simulation and analysis toolkit for cost-driven dynamic replication of a
//! single data object across geo-distributed servers.
//!
//! Storing a copy costs its server's storage rate per second and moving the
//! object between any two servers costs `λ`. Policies decide, request by
//! request, how long each server keeps its copy, optionally guided by a
//! binary forecast of whether the next local request comes within `λ`.

pub mod allocation;
pub mod engine;
pub mod error;
pub mod generators;
pub mod model;
pub mod offline;
pub mod policies;

pub use error::{AllocationError, EngineError, GeneratorError, ModelError, OfflineError};
pub use model::{
    approx_eq, ground_truth_predictions, validate_trace, CopyInterval, CopyKind, CostParams,
    CostReport, Prediction, PredictionStream, ReplicationLog, Request, RequestTrace, ServeOutcome,
    ServerId, Transfer,
};
