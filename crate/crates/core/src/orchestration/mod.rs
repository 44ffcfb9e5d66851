//! Workflow definitions and the engine that drives them.
//!
//! Each non-terminal lifecycle state is bound to an acting agent, optional
//! supporting agents that run first, and a verifier. Every artifact that
//! crosses an agent boundary passes the contract gate and, when it travels
//! as a message, the message gate. Strict enforcement blocks what fails
//! either gate and turns the stage into a `fail` outcome; permissive
//! enforcement delivers it and only records the events.

pub mod voting;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentInvocation, AgentSet};
use crate::claims::{self, Claim};
use crate::contracts::{check_preconditions, AgentCard, Artifact, Conditions, ContractRegistry, ENGINE_ID};
use crate::lifecycle::{
    validate_spec, LifecycleError, LifecycleInstance, LifecycleSpec, SpecError, Verifier, FAIL, PASS,
};
use crate::messaging::{validate_message, TypedMessage, Violation, ViolationCode};
use crate::trace::{Event, ExecutionTrace, TerminalKind, WarningCode};

pub use voting::{aggregate_votes, Label, Verdict, VoteError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    Centralized { hub: String },
    Decentralized { voters: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforcement {
    Strict,
    Permissive,
}

impl fmt::Display for Enforcement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Enforcement::Strict => "strict",
            Enforcement::Permissive => "permissive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBinding {
    pub agent: String,
    /// Agents dispatched before the acting agent; their outputs feed it and
    /// the verifier.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub supporting: Vec<String>,
    pub verifier: String,
}

impl StageBinding {
    pub fn new(agent: &str, verifier: &str) -> Self {
        Self {
            agent: agent.into(),
            supporting: Vec::new(),
            verifier: verifier.into(),
        }
    }

    pub fn with_supporting(mut self, agents: &[&str]) -> Self {
        self.supporting = agents.iter().map(|a| a.to_string()).collect();
        self
    }

    /// Supporting agents, then the acting agent.
    pub fn dispatch_order(&self) -> impl Iterator<Item = &str> {
        self.supporting
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.agent.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowDefinition {
    pub name: String,
    pub registry: ContractRegistry,
    pub cards: Vec<AgentCard>,
    pub lifecycle: LifecycleSpec,
    pub topology: Topology,
    pub stage_bindings: IndexMap<String, StageBinding>,
    pub max_rounds: u32,
    pub enforcement: Enforcement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Parse,
    Schema,
    CrossRef,
}

impl IssueKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            IssueKind::Parse => "ParseError",
            IssueKind::Schema => "SchemaError",
            IssueKind::CrossRef => "CrossRefError",
        }
    }
}

/// One configuration defect, located by JSON path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub kind: IssueKind,
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: IssueKind::Schema,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn cross_ref(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: IssueKind::CrossRef,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}: {}", self.kind.as_str(), self.message)
        } else {
            write!(f, "{} at {}: {}", self.kind.as_str(), self.path, self.message)
        }
    }
}

impl WorkflowDefinition {
    pub fn card(&self, agent_id: &str) -> Option<&AgentCard> {
        self.cards.iter().find(|c| c.agent_id == agent_id)
    }

    /// Every cross-reference and invariant violation, in document order.
    pub fn check(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if !self.registry.is_closed() {
            issues.push(ConfigIssue::cross_ref(
                "registry",
                "a contract references an unregistered kind",
            ));
        }

        let mut ids = BTreeSet::new();
        for (i, card) in self.cards.iter().enumerate() {
            let path = format!("cards[{i}]");
            if card.agent_id.is_empty() || card.agent_id == ENGINE_ID {
                issues.push(ConfigIssue::schema(
                    format!("{path}.agent_id"),
                    format!("agent id `{}` is empty or reserved", card.agent_id),
                ));
            } else if !ids.insert(card.agent_id.as_str()) {
                issues.push(ConfigIssue::schema(
                    format!("{path}.agent_id"),
                    format!("agent id `{}` is not unique", card.agent_id),
                ));
            }
            if self.registry.contract(&card.contract.name) != Some(&card.contract) {
                issues.push(ConfigIssue::cross_ref(
                    format!("{path}.role"),
                    format!("role `{}` is not a registered contract", card.contract.name),
                ));
            }
        }

        for e in validate_spec(&self.lifecycle) {
            let path = format!("lifecycle.{}", e.path());
            issues.push(match e {
                SpecError::UnknownInitial(_)
                | SpecError::UnknownTerminal { .. }
                | SpecError::UnknownState { .. }
                | SpecError::UnknownOutcome { .. } => ConfigIssue::cross_ref(path, e.to_string()),
                _ => ConfigIssue::schema(path, e.to_string()),
            });
        }
        for required in [PASS, FAIL] {
            if !self.lifecycle.has_outcome(required) {
                issues.push(ConfigIssue::schema(
                    "lifecycle.outcomes",
                    format!("outcome `{required}` must be declared"),
                ));
            }
        }

        match &self.topology {
            Topology::Centralized { hub } => {
                if self.card(hub).is_none() {
                    issues.push(ConfigIssue::cross_ref(
                        "topology.hub",
                        format!("hub `{hub}` has no card"),
                    ));
                }
            }
            Topology::Decentralized { voters } => {
                let mut seen = BTreeSet::new();
                for (i, v) in voters.iter().enumerate() {
                    if self.card(v).is_none() {
                        issues.push(ConfigIssue::cross_ref(
                            format!("topology.voters[{i}]"),
                            format!("voter `{v}` has no card"),
                        ));
                    } else if !seen.insert(v) {
                        issues.push(ConfigIssue::schema(
                            format!("topology.voters[{i}]"),
                            format!("voter `{v}` listed twice"),
                        ));
                    }
                }
                if voters.len() % 2 == 0 {
                    issues.push(ConfigIssue::schema(
                        "topology.voters",
                        format!("panel of {} voters is not odd", voters.len()),
                    ));
                }
            }
        }

        for (state, binding) in &self.stage_bindings {
            let path = format!("stage_bindings.{state}");
            if !self.lifecycle.has_state(state) || self.lifecycle.is_terminal(state) {
                issues.push(ConfigIssue::cross_ref(
                    &path,
                    format!("`{state}` is not a non-terminal lifecycle state"),
                ));
                continue;
            }
            if self.card(&binding.agent).is_none() {
                issues.push(ConfigIssue::cross_ref(
                    &path,
                    format!("agent `{}` has no card", binding.agent),
                ));
            }
            for (i, s) in binding.supporting.iter().enumerate() {
                if self.card(s).is_none() {
                    issues.push(ConfigIssue::cross_ref(
                        format!("{path}.supporting[{i}]"),
                        format!("agent `{s}` has no card"),
                    ));
                } else if *s == binding.agent || binding.supporting[..i].contains(s) {
                    issues.push(ConfigIssue::schema(
                        format!("{path}.supporting[{i}]"),
                        format!("agent `{s}` dispatched twice in one stage"),
                    ));
                }
            }
            if !Verifier::is_builtin(&binding.verifier) {
                issues.push(ConfigIssue::cross_ref(
                    format!("{path}.verifier"),
                    format!("unknown verifier `{}`", binding.verifier),
                ));
            }
            for outcome in [PASS, FAIL] {
                if self.lifecycle.has_outcome(outcome) && self.lifecycle.next(state, outcome).is_none() {
                    issues.push(ConfigIssue::cross_ref(
                        &path,
                        format!("lifecycle defines no transition for ({state}, {outcome})"),
                    ));
                }
            }
        }
        for state in self.lifecycle.non_terminal_states() {
            if !self.stage_bindings.contains_key(state) {
                issues.push(ConfigIssue::cross_ref(
                    "stage_bindings",
                    format!("state `{state}` is unbound"),
                ));
            }
        }

        if self.max_rounds == 0 {
            issues.push(ConfigIssue::schema("max_rounds", "must be at least 1"));
        }
        issues
    }
}

/// A message is deliverable under hub `hub` iff the hub sends or receives it.
pub fn route_centralized(hub: &str, msg: &TypedMessage) -> Result<(), Violation> {
    if msg.sender == hub || msg.receiver == hub {
        Ok(())
    } else {
        Err(Violation {
            code: ViolationCode::HubBypass,
            artifact: None,
            detail: format!("`{}` -> `{}` bypasses hub `{hub}`", msg.sender, msg.receiver),
        })
    }
}

/// Per-run inputs that come from the scenario rather than the workflow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    pub seed: u64,
    pub seed_artifacts: Vec<Artifact>,
    /// Expected outcome (or label) per lifecycle state.
    pub ground_truth: BTreeMap<String, String>,
    /// Replacement verifier names per lifecycle state.
    pub verifier_overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub trace: ExecutionTrace,
    pub final_state: String,
    pub terminal: TerminalKind,
    pub rounds_used: u32,
    /// Claim of the last verifier outcome, when the verifier produced one.
    pub verdict: Option<String>,
    pub verdict_correct: Option<bool>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid workflow: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ConfigError(Vec<ConfigIssue>),
    #[error("no agent supplied for card `{0}`")]
    MissingAgent(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
}

pub fn workflow_id(name: &str, seed: u64) -> String {
    format!("{name}-{seed:016x}")
}

enum Dispatch {
    Delivered(Vec<Artifact>),
    Blocked,
}

struct Engine<'a> {
    def: &'a WorkflowDefinition,
    agents: &'a AgentSet,
    ground_truth: &'a BTreeMap<String, String>,
    store: Vec<Artifact>,
    trace: ExecutionTrace,
    next_message: u64,
}

impl Engine<'_> {
    fn strict(&self) -> bool {
        self.def.enforcement == Enforcement::Strict
    }

    fn message_id(&mut self) -> u64 {
        let id = self.next_message;
        self.next_message += 1;
        id
    }

    /// Latest schema-valid artifact of each kind the card accepts, in the
    /// contract's input order.
    fn inputs_for(&self, card: &AgentCard) -> Vec<Artifact> {
        card.contract
            .inputs
            .iter()
            .filter_map(|input| {
                self.store
                    .iter()
                    .rev()
                    .find(|a| a.kind == input.kind && self.def.registry.validate_artifact(a).is_ok())
                    .cloned()
            })
            .collect()
    }

    fn message_violations(&self, msg: &TypedMessage) -> Vec<Violation> {
        let mut violations = validate_message(&self.def.registry, &self.def.cards, msg);
        if let Topology::Centralized { hub } = &self.def.topology {
            violations.extend(route_centralized(hub, msg).err());
        }
        violations
    }

    fn blocked(&mut self, round: u32, msg: &TypedMessage, reasons: Vec<String>) -> Dispatch {
        self.trace.record(
            round,
            Event::MessageBlocked {
                message_id: msg.message_id,
                sender: msg.sender.clone(),
                receiver: msg.receiver.clone(),
                reasons,
                payload: msg.payload.clone(),
            },
        );
        Dispatch::Blocked
    }

    fn sent(&mut self, round: u32, msg: &TypedMessage) {
        self.trace.record(
            round,
            Event::MessageSent {
                message_id: msg.message_id,
                sender: msg.sender.clone(),
                receiver: msg.receiver.clone(),
                payload: msg.payload.clone(),
            },
        );
    }

    fn record_violations(&mut self, round: u32, msg: &TypedMessage, violations: &[Violation]) {
        for v in violations {
            self.trace.record(
                round,
                Event::ValidationViolation {
                    message_id: msg.message_id,
                    code: v.code,
                    artifact: v.artifact,
                    detail: v.detail.clone(),
                },
            );
        }
    }

    /// Pass/fail claims that contradict the scenario's ground truth for
    /// `state`. Labels are left to the verifier.
    fn audit(&self, state: &str, outputs: &[Artifact]) -> Vec<String> {
        let Some(expected) = self.ground_truth.get(state) else {
            return Vec::new();
        };
        if expected != PASS && expected != FAIL {
            return Vec::new();
        }
        outputs
            .iter()
            .filter_map(|a| match claims::claim_of(a) {
                Some(c @ (Claim::Pass | Claim::Fail)) if c.as_str() != expected => Some(format!(
                    "`{}` claims {} but ground truth is {expected}",
                    a.kind,
                    c.as_str()
                )),
                _ => None,
            })
            .collect()
    }

    fn dispatch(&mut self, state: &str, agent_id: &str, coordinator: &str, round: u32) -> Result<Dispatch, RunError> {
        let def = self.def;
        let card = def.card(agent_id).expect("checked: bound agents have cards");
        let contract = &card.contract;
        let inputs = self.inputs_for(card);
        let remote = agent_id != coordinator;

        let inbound =
            remote.then(|| TypedMessage::new(self.message_id(), coordinator, agent_id, round, inputs.clone()));

        let pre = check_preconditions(&def.registry, contract, &inputs)
            .expect("inputs are drawn from schema-valid artifacts");
        if let Conditions::Missing(missing) = pre {
            self.trace.record(
                round,
                Event::PreconditionMiss {
                    agent: agent_id.into(),
                    missing: missing.clone(),
                },
            );
            if self.strict() {
                let reason = format!("precondition: `{agent_id}` lacks {}", missing.join(", "));
                return Ok(match &inbound {
                    Some(msg) => self.blocked(round, msg, vec![reason]),
                    None => Dispatch::Blocked,
                });
            }
        }
        if let Some(msg) = &inbound {
            let violations = self.message_violations(msg);
            self.record_violations(round, msg, &violations);
            if self.strict() && !violations.is_empty() {
                let reasons = violations.iter().map(|v| format!("{}: {}", v.code, v.detail)).collect();
                return Ok(self.blocked(round, msg, reasons));
            }
            self.sent(round, msg);
        }

        let agent = self.agents.get(agent_id).expect("checked: every card has an agent");
        let outputs = agent.invoke(&AgentInvocation::new(inputs, round))?;

        let invalid: Vec<bool> = outputs
            .iter()
            .map(|a| def.registry.validate_artifact(a).is_err())
            .collect();
        let present: BTreeSet<&str> = outputs.iter().map(|a| a.kind.as_str()).collect();
        let malformed: BTreeSet<String> = outputs
            .iter()
            .zip(&invalid)
            .filter(|(a, bad)| **bad && contract.promises(&a.kind))
            .map(|(a, _)| a.kind.clone())
            .collect();
        let missing: BTreeSet<String> = contract
            .outputs
            .iter()
            .filter(|k| !present.contains(k.as_str()))
            .cloned()
            .collect();
        let extra: BTreeSet<&str> = present.iter().copied().filter(|k| !contract.promises(k)).collect();
        let contract_failed = !missing.is_empty() || !malformed.is_empty();
        if contract_failed {
            self.trace.record(
                round,
                Event::PostconditionMiss {
                    agent: agent_id.into(),
                    missing: missing.iter().cloned().collect(),
                    malformed: malformed.iter().cloned().collect(),
                    substituted: !missing.is_empty() && !extra.is_empty(),
                },
            );
        }
        if !extra.is_empty() {
            self.trace.record(
                round,
                Event::Warning {
                    agent: agent_id.into(),
                    code: WarningCode::ExtraOutput,
                    detail: format!(
                        "unpromised kinds: {}",
                        extra.iter().copied().collect::<Vec<_>>().join(", ")
                    ),
                },
            );
        }

        if !remote {
            if self.strict() && contract_failed {
                return Ok(Dispatch::Blocked);
            }
            self.store.extend(outputs.iter().cloned());
            return Ok(Dispatch::Delivered(outputs));
        }

        let reply = TypedMessage::new(self.message_id(), agent_id, coordinator, round, outputs);
        // A malformed promised artifact is already attributed to the contract gate.
        let violations: Vec<Violation> = self
            .message_violations(&reply)
            .into_iter()
            .filter(|v| {
                !(v.code == ViolationCode::SchemaViolation
                    && v.artifact
                        .is_some_and(|i| invalid[i] && contract.promises(&reply.payload[i].kind)))
            })
            .collect();
        self.record_violations(round, &reply, &violations);
        if self.strict() {
            let mut reasons: Vec<String> = Vec::new();
            if contract_failed {
                reasons.push(format!(
                    "postcondition: missing [{}], malformed [{}]",
                    missing.iter().cloned().collect::<Vec<_>>().join(", "),
                    malformed.iter().cloned().collect::<Vec<_>>().join(", ")
                ));
            }
            reasons.extend(violations.iter().map(|v| format!("{}: {}", v.code, v.detail)));
            reasons.extend(
                self.audit(state, &reply.payload)
                    .into_iter()
                    .map(|r| format!("audit: {r}")),
            );
            if !reasons.is_empty() {
                return Ok(self.blocked(round, &reply, reasons));
            }
        }
        self.sent(round, &reply);
        self.store.extend(reply.payload.iter().cloned());
        Ok(Dispatch::Delivered(reply.payload))
    }
}

/// Runs a workflow to a terminal state.
///
/// Deterministic in `(def, agents, config)`. Agents are scripted, so the
/// seed only names the run.
pub fn run_workflow(def: &WorkflowDefinition, agents: &AgentSet, config: &RunConfig) -> Result<RunOutcome, RunError> {
    let mut issues = def.check();
    let mut verifiers: BTreeMap<&str, Verifier> = BTreeMap::new();
    for (state, name) in &config.verifier_overrides {
        if !def.stage_bindings.contains_key(state) {
            issues.push(ConfigIssue::cross_ref(
                format!("verifier_overrides.{state}"),
                format!("`{state}` has no stage binding"),
            ));
        } else if !Verifier::is_builtin(name) {
            issues.push(ConfigIssue::cross_ref(
                format!("verifier_overrides.{state}"),
                format!("unknown verifier `{name}`"),
            ));
        }
    }
    for (i, a) in config.seed_artifacts.iter().enumerate() {
        if let Err(e) = def.registry.validate_artifact(a) {
            issues.push(ConfigIssue::schema(format!("seed_artifacts[{i}]"), e.to_string()));
        }
    }
    if !issues.is_empty() {
        return Err(RunError::ConfigError(issues));
    }
    for (state, binding) in &def.stage_bindings {
        let name = config.verifier_overrides.get(state).unwrap_or(&binding.verifier);
        verifiers.insert(
            state,
            Verifier::builtin(name, state).expect("checked: builtin verifier"),
        );
    }
    if let Some(card) = def.cards.iter().find(|c| !agents.contains_key(&c.agent_id)) {
        return Err(RunError::MissingAgent(card.agent_id.clone()));
    }

    let spec = Arc::new(def.lifecycle.clone());
    let mut instance = LifecycleInstance::new(Arc::clone(&spec), def.max_rounds)?;
    let mut engine = Engine {
        def,
        agents,
        ground_truth: &config.ground_truth,
        store: config.seed_artifacts.clone(),
        trace: ExecutionTrace::new(workflow_id(&def.name, config.seed)),
        next_message: 0,
    };
    let mut verdict = None;
    let mut verdict_correct = None;

    while !instance.is_terminal() {
        let state = instance.current().to_string();
        let round = instance.round();
        let binding = &def.stage_bindings[&state];
        let coordinator = match &def.topology {
            Topology::Centralized { hub } => hub.as_str(),
            Topology::Decentralized { .. } => binding.agent.as_str(),
        };
        tracing::debug!(state = %state, round, "dispatching stage");

        let mut stage_outputs = Vec::new();
        let mut blocked = false;
        for agent_id in binding.dispatch_order() {
            match engine.dispatch(&state, agent_id, coordinator, round)? {
                Dispatch::Delivered(out) => stage_outputs.extend(out),
                Dispatch::Blocked => {
                    blocked = true;
                    break;
                }
            }
        }

        let outcome = if blocked {
            FAIL.to_string()
        } else {
            let verifier = &verifiers[state.as_str()];
            let eval = instance.run_verifier(verifier, &stage_outputs)?;
            let expected = config.ground_truth.get(&state).cloned();
            if let Some(claim) = &eval.claim {
                verdict_correct = expected.as_ref().map(|e| e == claim);
                verdict = Some(claim.clone());
            }
            engine.trace.record(
                round,
                Event::VerifierOutcome {
                    state: state.clone(),
                    verifier: verifier.name.clone(),
                    outcome: eval.outcome.clone(),
                    claim: eval.claim,
                    expected,
                },
            );
            eval.outcome
        };

        let step = instance.step(&outcome)?;
        if step.exhausted {
            engine.trace.record(
                round,
                Event::ForcedExhaustion {
                    state: state.clone(),
                    max_rounds: def.max_rounds,
                },
            );
        }
        let to = step.entry.to.clone();
        let terminal = spec.is_terminal(&to).then(|| {
            if spec.failure_terminal() == Some(to.as_str()) {
                TerminalKind::Failure
            } else {
                TerminalKind::Success
            }
        });
        tracing::info!(from = %state, outcome = %step.entry.outcome, to = %to, round, "transition");
        engine.trace.record(
            round,
            Event::Transition {
                from: step.entry.from,
                outcome: step.entry.outcome,
                to,
                terminal,
            },
        );
    }

    let final_state = instance.current().to_string();
    let terminal = if spec.failure_terminal() == Some(final_state.as_str()) {
        TerminalKind::Failure
    } else {
        TerminalKind::Success
    };
    Ok(RunOutcome {
        trace: engine.trace,
        final_state,
        terminal,
        rounds_used: instance.round(),
        verdict,
        verdict_correct,
    })
}
