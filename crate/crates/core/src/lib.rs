//! Coordination protocol middleware for multi-agent workflows.
//!
//! Roles declare behavioral contracts, agents exchange typed JSON-RPC
//! messages, and a verifier-gated lifecycle decides when a task advances,
//! retries or fails. A scripted-agent harness with fault injection and a
//! rule-based failure classifier support offline evaluation.

pub mod agents;
pub mod claims;
pub mod config;
pub mod contracts;
pub mod lifecycle;
pub mod messaging;
pub mod orchestration;
pub mod scenario;
pub mod trace;

pub use contracts::{AgentCard, Artifact, ArtifactKind, BehavioralContract, ContractRegistry};
pub use lifecycle::{LifecycleInstance, LifecycleSpec};
pub use messaging::TypedMessage;
pub use orchestration::{run_workflow, Enforcement, RunConfig, RunOutcome, WorkflowDefinition};
pub use trace::{ExecutionTrace, FailureRecord, FailureReport};
