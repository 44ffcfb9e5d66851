//! Task lifecycle as a finite state machine with verifier-gated transitions.
//!
//! A [`LifecycleSpec`] is `(states, outcomes, transitions, initial,
//! terminals)`. A [`LifecycleInstance`] walks it one outcome at a time. Any
//! transition that returns to the current state (retry) or to a
//! non-terminal state already visited in the current round (revert) starts
//! a new round; once the round budget is spent the instance is forced into
//! the exhaustion terminal.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{self, Claim};
use crate::contracts::Artifact;
use crate::orchestration::voting;

pub const PASS: &str = "pass";
pub const FAIL: &str = "fail";
/// Synthetic outcome recorded when the round budget forces termination.
pub const ROUNDS_EXHAUSTED: &str = "rounds_exhausted";
/// Exhaustion terminal used when a spec does not name one.
pub const DEFAULT_FAILURE_TERMINAL: &str = "failed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: String,
    pub on: String,
    pub to: String,
}

impl Transition {
    pub fn new(from: &str, on: &str, to: &str) -> Self {
        Self {
            from: from.into(),
            on: on.into(),
            to: to.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleSpec {
    pub states: Vec<String>,
    pub outcomes: Vec<String>,
    pub initial: String,
    pub terminals: Vec<String>,
    pub transitions: Vec<Transition>,
    /// Terminal forced when rounds run out; defaults to `failed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhaustion_terminal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("state `{0}` declared more than once")]
    DuplicateState(String),
    #[error("outcome `{0}` declared more than once")]
    DuplicateOutcome(String),
    #[error("outcome `{0}` is reserved")]
    ReservedOutcome(String),
    #[error("initial state `{0}` is not a declared state")]
    UnknownInitial(String),
    #[error("terminal `{state}` is not a declared state")]
    UnknownTerminal { index: usize, state: String },
    #[error("transition {index} uses undeclared state `{state}`")]
    UnknownState {
        index: usize,
        end: &'static str,
        state: String,
    },
    #[error("transition {index} uses undeclared outcome `{outcome}`")]
    UnknownOutcome { index: usize, outcome: String },
    #[error("transition {index} redefines ({from}, {on})")]
    DuplicateTransition { index: usize, from: String, on: String },
    #[error("transition {index} leaves terminal state `{from}`")]
    TransitionFromTerminal { index: usize, from: String },
    #[error("non-terminal state `{0}` has no outgoing transition")]
    DeadEnd(String),
    #[error("no terminal state is reachable from the initial state")]
    UnreachableTerminal,
    #[error("no exhaustion terminal: declare `exhaustion_terminal` or a `failed` terminal")]
    NoExhaustionTerminal,
    #[error("exhaustion terminal `{0}` is not a terminal state")]
    ExhaustionNotTerminal(String),
}

impl SpecError {
    /// JSON path of the offending element, relative to the spec object.
    pub fn path(&self) -> String {
        match self {
            SpecError::DuplicateState(_) => "states".into(),
            SpecError::DuplicateOutcome(_) | SpecError::ReservedOutcome(_) => "outcomes".into(),
            SpecError::UnknownInitial(_) | SpecError::UnreachableTerminal => "initial".into(),
            SpecError::UnknownTerminal { index, .. } => format!("terminals[{index}]"),
            SpecError::UnknownState { index, end, .. } => format!("transitions[{index}].{end}"),
            SpecError::UnknownOutcome { index, .. } => format!("transitions[{index}].on"),
            SpecError::DuplicateTransition { index, .. } | SpecError::TransitionFromTerminal { index, .. } => {
                format!("transitions[{index}]")
            }
            SpecError::DeadEnd(s) => format!("states.{s}"),
            SpecError::NoExhaustionTerminal | SpecError::ExhaustionNotTerminal(_) => "exhaustion_terminal".into(),
        }
    }
}

impl LifecycleSpec {
    pub fn is_terminal(&self, state: &str) -> bool {
        self.terminals.iter().any(|t| t == state)
    }

    pub fn has_state(&self, state: &str) -> bool {
        self.states.iter().any(|s| s == state)
    }

    pub fn has_outcome(&self, outcome: &str) -> bool {
        self.outcomes.iter().any(|o| o == outcome)
    }

    /// δ(state, outcome), if defined.
    pub fn next(&self, state: &str, outcome: &str) -> Option<&str> {
        self.transitions
            .iter()
            .find(|t| t.from == state && t.on == outcome)
            .map(|t| t.to.as_str())
    }

    pub fn failure_terminal(&self) -> Option<&str> {
        match &self.exhaustion_terminal {
            Some(t) => Some(t.as_str()),
            None if self.is_terminal(DEFAULT_FAILURE_TERMINAL) => Some(DEFAULT_FAILURE_TERMINAL),
            None => None,
        }
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = &str> {
        self.states.iter().map(String::as_str).filter(|s| !self.is_terminal(s))
    }

    pub fn default_development() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            states: s(&["initialized", "implementing", "reviewing", "completed", "failed"]),
            outcomes: s(&[PASS, FAIL]),
            initial: "initialized".into(),
            terminals: s(&["completed", "failed"]),
            transitions: vec![
                Transition::new("initialized", PASS, "implementing"),
                Transition::new("initialized", FAIL, "failed"),
                Transition::new("implementing", PASS, "reviewing"),
                Transition::new("implementing", FAIL, "implementing"),
                Transition::new("reviewing", PASS, "completed"),
                Transition::new("reviewing", FAIL, "implementing"),
            ],
            exhaustion_terminal: None,
        }
    }
}

/// Breadth-first closure of δ from the initial state. Transitions naming
/// undeclared states are still followed.
pub fn reachable_states(spec: &LifecycleSpec) -> BTreeSet<String> {
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &spec.transitions {
        adjacency.entry(t.from.as_str()).or_default().push(t.to.as_str());
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([spec.initial.as_str()]);
    seen.insert(spec.initial.clone());
    while let Some(state) = queue.pop_front() {
        for next in adjacency.get(state).into_iter().flatten() {
            if seen.insert(next.to_string()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Enumerates every violated spec invariant; empty means valid.
pub fn validate_spec(spec: &LifecycleSpec) -> Vec<SpecError> {
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &spec.states {
        if !seen.insert(s) {
            errors.push(SpecError::DuplicateState(s.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for o in &spec.outcomes {
        if o == ROUNDS_EXHAUSTED {
            errors.push(SpecError::ReservedOutcome(o.clone()));
        } else if !seen.insert(o) {
            errors.push(SpecError::DuplicateOutcome(o.clone()));
        }
    }
    if !spec.has_state(&spec.initial) {
        errors.push(SpecError::UnknownInitial(spec.initial.clone()));
    }
    for (index, t) in spec.terminals.iter().enumerate() {
        if !spec.has_state(t) {
            errors.push(SpecError::UnknownTerminal {
                index,
                state: t.clone(),
            });
        }
    }
    let mut keys = BTreeSet::new();
    for (index, t) in spec.transitions.iter().enumerate() {
        for (end, state) in [("from", &t.from), ("to", &t.to)] {
            if !spec.has_state(state) {
                errors.push(SpecError::UnknownState {
                    index,
                    end,
                    state: state.clone(),
                });
            }
        }
        if !spec.has_outcome(&t.on) {
            errors.push(SpecError::UnknownOutcome {
                index,
                outcome: t.on.clone(),
            });
        }
        if spec.is_terminal(&t.from) {
            errors.push(SpecError::TransitionFromTerminal {
                index,
                from: t.from.clone(),
            });
        } else if !keys.insert((t.from.as_str(), t.on.as_str())) {
            errors.push(SpecError::DuplicateTransition {
                index,
                from: t.from.clone(),
                on: t.on.clone(),
            });
        }
    }
    for state in spec.non_terminal_states() {
        if !spec.transitions.iter().any(|t| t.from == state) {
            errors.push(SpecError::DeadEnd(state.to_string()));
        }
    }
    if spec.has_state(&spec.initial) {
        let reachable = reachable_states(spec);
        if !spec
            .terminals
            .iter()
            .any(|t| spec.has_state(t) && reachable.contains(t))
        {
            errors.push(SpecError::UnreachableTerminal);
        }
    }
    match spec.failure_terminal() {
        None => errors.push(SpecError::NoExhaustionTerminal),
        Some(t) if !spec.is_terminal(t) => errors.push(SpecError::ExhaustionNotTerminal(t.into())),
        Some(_) => {}
    }
    errors
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("invalid lifecycle spec: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<SpecError>),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("instance already in terminal state `{0}`")]
    AlreadyTerminal(String),
    #[error("outcome `{0}` is not declared by the lifecycle")]
    UnknownOutcome(String),
    #[error("no transition defined for ({state}, {outcome})")]
    UndefinedTransition { state: String, outcome: String },
    #[error("verifier attached to `{attached}` invoked in state `{current}`")]
    VerifierStateMismatch { attached: String, current: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub from: String,
    pub outcome: String,
    pub to: String,
}

/// What one call to [`LifecycleInstance::step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReport {
    pub entry: HistoryEntry,
    /// Round in which the transition happened.
    pub round: u32,
    pub new_round: bool,
    /// The round budget ran out and the exhaustion terminal was forced.
    pub exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct LifecycleInstance {
    spec: Arc<LifecycleSpec>,
    current: String,
    round: u32,
    max_rounds: u32,
    history: Vec<HistoryEntry>,
    /// History index at which the current round began.
    round_start: usize,
}

impl LifecycleInstance {
    pub fn new(spec: Arc<LifecycleSpec>, max_rounds: u32) -> Result<Self, LifecycleError> {
        let errors = validate_spec(&spec);
        if !errors.is_empty() {
            return Err(LifecycleError::InvalidSpec(errors));
        }
        if max_rounds == 0 {
            return Err(LifecycleError::ZeroRounds);
        }
        Ok(Self {
            current: spec.initial.clone(),
            spec,
            round: 1,
            max_rounds,
            history: Vec::new(),
            round_start: 0,
        })
    }

    pub fn spec(&self) -> &LifecycleSpec {
        &self.spec
    }

    pub fn current(&self) -> &str {
        &self.current
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn max_rounds(&self) -> u32 {
        self.max_rounds
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn is_terminal(&self) -> bool {
        self.spec.is_terminal(&self.current)
    }

    /// True when `state` was already entered during the current round.
    fn visited_this_round(&self, state: &str) -> bool {
        self.current == state || self.history[self.round_start..].iter().any(|h| h.from == state)
    }

    pub fn step(&mut self, outcome: &str) -> Result<StepReport, LifecycleError> {
        if self.is_terminal() {
            return Err(LifecycleError::AlreadyTerminal(self.current.clone()));
        }
        if !self.spec.has_outcome(outcome) {
            return Err(LifecycleError::UnknownOutcome(outcome.to_string()));
        }
        let target = self
            .spec
            .next(&self.current, outcome)
            .ok_or_else(|| LifecycleError::UndefinedTransition {
                state: self.current.clone(),
                outcome: outcome.to_string(),
            })?
            .to_string();
        let retry = target == self.current;
        let revert = !retry && !self.spec.is_terminal(&target) && self.visited_this_round(&target);
        let round = self.round;
        let new_round = retry || revert;
        let (entry, exhausted) = if new_round && self.round >= self.max_rounds {
            let forced = self
                .spec
                .failure_terminal()
                .expect("validated spec has an exhaustion terminal")
                .to_string();
            let entry = HistoryEntry {
                from: self.current.clone(),
                outcome: ROUNDS_EXHAUSTED.into(),
                to: forced,
            };
            (entry, true)
        } else {
            if new_round {
                self.round += 1;
            }
            let entry = HistoryEntry {
                from: self.current.clone(),
                outcome: outcome.to_string(),
                to: target,
            };
            (entry, false)
        };
        self.current = entry.to.clone();
        self.history.push(entry.clone());
        if new_round && !exhausted {
            self.round_start = self.history.len();
        }
        Ok(StepReport {
            entry,
            round,
            new_round: new_round && !exhausted,
            exhausted,
        })
    }

    pub fn run_verifier(&self, verifier: &Verifier, artifacts: &[Artifact]) -> Result<Evaluation, LifecycleError> {
        if verifier.attached_state != self.current {
            return Err(LifecycleError::VerifierStateMismatch {
                attached: verifier.attached_state.clone(),
                current: self.current.clone(),
            });
        }
        Ok(verifier.evaluate(artifacts))
    }
}

/// Replays a history from the initial state and returns the state reached.
pub fn replay(spec: &LifecycleSpec, history: &[HistoryEntry]) -> Option<String> {
    let mut state = spec.initial.clone();
    for h in history {
        if h.from != state || spec.is_terminal(&state) {
            return None;
        }
        let to = if h.outcome == ROUNDS_EXHAUSTED {
            spec.failure_terminal()?
        } else {
            spec.next(&state, &h.outcome)?
        };
        if to != h.to {
            return None;
        }
        state = to.to_string();
    }
    Some(state)
}

/// Result of a verifier: the outcome fed to δ, plus the label the verifier
/// settled on when it decides more than pass/fail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub outcome: String,
    pub claim: Option<String>,
}

impl Evaluation {
    pub fn of(pass: bool) -> Self {
        Self {
            outcome: if pass { PASS } else { FAIL }.into(),
            claim: None,
        }
    }
}

type EvalFn = dyn Fn(&[Artifact]) -> Evaluation + Send + Sync;

/// A stage-attached check mapping produced artifacts to an outcome.
#[derive(Clone)]
pub struct Verifier {
    pub name: String,
    pub attached_state: String,
    evaluate: Arc<EvalFn>,
}

impl fmt::Debug for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Verifier")
            .field("name", &self.name)
            .field("attached_state", &self.attached_state)
            .finish()
    }
}

impl Verifier {
    pub fn new<F>(name: impl Into<String>, attached_state: impl Into<String>, evaluate: F) -> Self
    where
        F: Fn(&[Artifact]) -> Evaluation + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            attached_state: attached_state.into(),
            evaluate: Arc::new(evaluate),
        }
    }

    pub fn evaluate(&self, artifacts: &[Artifact]) -> Evaluation {
        (self.evaluate)(artifacts)
    }

    /// Built-in verifiers, looked up by name:
    ///
    /// * `always_pass`, `always_fail`
    /// * `nonempty_<kind>`: some artifact of `<kind>` has every field nonempty
    /// * `approval`: at least one pass/fail claim, and every claim is pass
    /// * `majority_verdict`: an odd panel of verdicts; the claim is the
    ///   majority label
    pub fn builtin(name: &str, attached_state: &str) -> Option<Self> {
        let v = |f: fn(&[Artifact]) -> Evaluation| Some(Self::new(name, attached_state, f));
        match name {
            "always_pass" => v(|_| Evaluation::of(true)),
            "always_fail" => v(|_| Evaluation::of(false)),
            "approval" => v(approval),
            "majority_verdict" => v(majority_verdict),
            _ => {
                let kind = name.strip_prefix("nonempty_")?.to_string();
                if kind.is_empty() {
                    return None;
                }
                Some(Self::new(name, attached_state, move |artifacts: &[Artifact]| {
                    Evaluation::of(artifacts.iter().any(|a| {
                        a.kind == kind && !a.fields.is_empty() && a.fields.values().all(|v| !v.trim().is_empty())
                    }))
                }))
            }
        }
    }

    pub fn is_builtin(name: &str) -> bool {
        Self::builtin(name, "").is_some()
    }
}

fn approval(artifacts: &[Artifact]) -> Evaluation {
    let claims: Vec<Claim> = artifacts.iter().filter_map(claims::claim_of).collect();
    Evaluation::of(!claims.is_empty() && claims.iter().all(|c| *c == Claim::Pass))
}

fn majority_verdict(artifacts: &[Artifact]) -> Evaluation {
    let labels: Vec<voting::Label> = artifacts
        .iter()
        .filter_map(|a| match claims::claim_of(a) {
            Some(Claim::Label(l)) => Some(l),
            _ => None,
        })
        .collect();
    match voting::majority(&labels) {
        Some(label) => Evaluation {
            outcome: PASS.into(),
            claim: Some(label.to_string()),
        },
        None => Evaluation::of(false),
    }
}
