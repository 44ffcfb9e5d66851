//! Agents: the `run()` boundary, deterministic scripted agents with fault
//! injection, and the HTTP transport in [`http`].
//!
//! Agents are untrusted. Nothing here checks contracts or schemas; the
//! engine does that on every artifact that crosses the boundary.

pub mod http;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims;
use crate::contracts::{AgentCard, Artifact};

pub use http::{fetch_card, remote_invoke, serve_agent, RemoteAgent, ServerHandle, TransportError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInvocation {
    pub inputs: Vec<Artifact>,
    pub round: u32,
    pub instruction: Option<String>,
}

impl AgentInvocation {
    pub fn new(inputs: Vec<Artifact>, round: u32) -> Self {
        Self {
            inputs,
            round,
            instruction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("agent `{agent}` has {steps} script steps, round {round} requested")]
    ScriptExhausted { agent: String, round: u32, steps: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub trait Agent: Send + Sync {
    fn card(&self) -> &AgentCard;

    fn invoke(&self, invocation: &AgentInvocation) -> Result<Vec<Artifact>, AgentError>;

    fn agent_id(&self) -> &str {
        &self.card().agent_id
    }
}

/// Agents keyed by agent id.
pub type AgentSet = BTreeMap<String, Arc<dyn Agent>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    OmitOutput,
    DropRequiredField,
    WrongKind,
    WrongVerdict,
    ExtraKind,
}

/// One injected defect. `kind` names the kind used by `WrongKind` and
/// `ExtraKind`; `field` names the field removed by `DropRequiredField`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    pub round: u32,
    pub fault: FaultKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl FaultEntry {
    pub fn new(round: u32, fault: FaultKind) -> Self {
        Self {
            round,
            fault,
            kind: None,
            field: None,
        }
    }

    /// Applies the defect to a round's output.
    ///
    /// * `OmitOutput` drops the first artifact.
    /// * `DropRequiredField` removes `field` (default: the first field) from
    ///   the first artifact that has it.
    /// * `WrongKind` relabels the first artifact as `kind` (default:
    ///   `<kind>_mislabeled`).
    /// * `WrongVerdict` flips the first claim-bearing artifact.
    /// * `ExtraKind` appends an artifact of `kind` (default:
    ///   `unsolicited_note`).
    ///
    /// A fault with nothing to act on leaves the output unchanged.
    pub fn apply(&self, outputs: &mut Vec<Artifact>) {
        match self.fault {
            FaultKind::OmitOutput => {
                if !outputs.is_empty() {
                    outputs.remove(0);
                }
            }
            FaultKind::DropRequiredField => {
                let target = outputs.iter_mut().find(|a| match &self.field {
                    Some(f) => a.fields.contains_key(f),
                    None => !a.fields.is_empty(),
                });
                if let Some(a) = target {
                    let name = match &self.field {
                        Some(f) => f.clone(),
                        None => a.fields.keys().next().cloned().expect("nonempty"),
                    };
                    a.fields.remove(&name);
                }
            }
            FaultKind::WrongKind => {
                if let Some(a) = outputs.first_mut() {
                    a.kind = self.kind.clone().unwrap_or_else(|| format!("{}_mislabeled", a.kind));
                }
            }
            FaultKind::WrongVerdict => {
                if let Some(i) = outputs.iter().position(|a| claims::claim_of(a).is_some()) {
                    outputs[i] = claims::flipped(&outputs[i]).expect("claim-bearing");
                }
            }
            FaultKind::ExtraKind => {
                let kind = self.kind.clone().unwrap_or_else(|| "unsolicited_note".into());
                outputs.push(Artifact::text(kind, "unsolicited output"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub outputs: Vec<Artifact>,
}

/// Replays a fixed script, one step per round, with faults applied.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    card: AgentCard,
    script: Vec<ScriptStep>,
    fault_plan: Vec<FaultEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("agent `{0}` has an empty script")]
    EmptyScript(String),
    #[error("agent `{agent}` schedules a fault in round {round}, beyond max_rounds {max_rounds}")]
    FaultBeyondRounds { agent: String, round: u32, max_rounds: u32 },
    #[error("agent `{0}` schedules a fault in round 0")]
    FaultInRoundZero(String),
}

impl ScriptedAgent {
    pub fn new(
        card: AgentCard,
        script: Vec<ScriptStep>,
        fault_plan: Vec<FaultEntry>,
        max_rounds: u32,
    ) -> Result<Self, ScriptError> {
        if script.is_empty() {
            return Err(ScriptError::EmptyScript(card.agent_id));
        }
        for f in &fault_plan {
            if f.round == 0 {
                return Err(ScriptError::FaultInRoundZero(card.agent_id));
            }
            if f.round > max_rounds {
                return Err(ScriptError::FaultBeyondRounds {
                    agent: card.agent_id,
                    round: f.round,
                    max_rounds,
                });
            }
        }
        Ok(Self {
            card,
            script,
            fault_plan,
        })
    }

    pub fn script(&self) -> &[ScriptStep] {
        &self.script
    }

    pub fn fault_plan(&self) -> &[FaultEntry] {
        &self.fault_plan
    }
}

impl Agent for ScriptedAgent {
    fn card(&self) -> &AgentCard {
        &self.card
    }

    fn invoke(&self, invocation: &AgentInvocation) -> Result<Vec<Artifact>, AgentError> {
        let round = invocation.round;
        let step = (round as usize)
            .checked_sub(1)
            .and_then(|i| self.script.get(i))
            .ok_or_else(|| AgentError::ScriptExhausted {
                agent: self.card.agent_id.clone(),
                round,
                steps: self.script.len(),
            })?;
        let mut outputs = step.outputs.clone();
        for fault in self.fault_plan.iter().filter(|f| f.round == round) {
            fault.apply(&mut outputs);
        }
        Ok(outputs)
    }
}
