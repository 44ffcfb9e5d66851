//! Scenario files: agent scripts, fault plans and ground truth for one run.
//!
//! A workflow says who does what; a scenario says what each agent answers
//! in each round, which defects to inject and what the right answers are.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSet, FaultEntry, ScriptError, ScriptStep, ScriptedAgent};
use crate::contracts::Artifact;
use crate::orchestration::{RunConfig, WorkflowDefinition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub script: Vec<ScriptStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verifier_overrides: BTreeMap<String, String>,
    pub agents: BTreeMap<String, AgentScript>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("SchemaError at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("CrossRefError at agents.{0}: no card with this agent id")]
    UnknownAgent(String),
    #[error("CrossRefError at agents: no script for agent `{0}`")]
    MissingScript(String),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            if e.inner().is_data() {
                ScenarioError::Schema {
                    path: e.path().to_string(),
                    message: e.inner().to_string(),
                }
            } else {
                ScenarioError::Parse(e.inner().to_string())
            }
        })?;
        de.end().map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("scenario serializes");
        out.push('\n');
        out
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            seed,
            seed_artifacts: self.seed_artifacts.clone(),
            ground_truth: self.ground_truth.clone(),
            verifier_overrides: self.verifier_overrides.clone(),
        }
    }

    /// One scripted agent per card of `def`.
    pub fn scripted_agents(&self, def: &WorkflowDefinition) -> Result<BTreeMap<String, ScriptedAgent>, ScenarioError> {
        if let Some(id) = self.agents.keys().find(|id| def.card(id).is_none()) {
            return Err(ScenarioError::UnknownAgent(id.clone()));
        }
        def.cards
            .iter()
            .map(|card| {
                let s = self
                    .agents
                    .get(&card.agent_id)
                    .ok_or_else(|| ScenarioError::MissingScript(card.agent_id.clone()))?;
                let agent = ScriptedAgent::new(card.clone(), s.script.clone(), s.faults.clone(), def.max_rounds)?;
                Ok((card.agent_id.clone(), agent))
            })
            .collect()
    }

    pub fn build_agents(&self, def: &WorkflowDefinition) -> Result<AgentSet, ScenarioError> {
        Ok(self
            .scripted_agents(def)?
            .into_iter()
            .map(|(id, a)| (id, Arc::new(a) as Arc<dyn crate::agents::Agent>))
            .collect())
    }
}
