//! Versioned workflow files.
//!
//! A workflow file holds a registry document, agent cards that name their
//! contract by role, a lifecycle spec, a topology, stage bindings, the
//! round budget and the enforcement mode. Syntax and shape errors stop at
//! the first one; cross-reference errors are collected, each with the JSON
//! path of the offending element. The layout is documented in
//! `docs/workflow-schema.md`.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::contracts::{
    AgentCard, ArtifactKind, BehavioralContract, ContractError, ContractRegistry, Endpoint, FieldSpec, Modality,
    RegistryDocument, CONTROL_SIGNAL,
};
use crate::lifecycle::LifecycleSpec;
use crate::orchestration::{ConfigIssue, Enforcement, IssueKind, StageBinding, Topology, WorkflowDefinition};

pub const FORMAT_VERSION: &str = "1.0.0";

const DEV_DEFAULT: &str = include_str!("../../../configs/dev_default.json");
const VULN_DEFAULT: &str = include_str!("../../../configs/vuln_default.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CardEntry {
    agent_id: String,
    role: String,
    endpoint: Endpoint,
    modalities: Vec<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    auth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkflowFile {
    version: String,
    name: String,
    registry: RegistryDocument,
    cards: Vec<CardEntry>,
    lifecycle: LifecycleSpec,
    topology: Topology,
    stage_bindings: IndexMap<String, StageBinding>,
    max_rounds: u32,
    enforcement: Enforcement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadError {
    pub issues: Vec<ConfigIssue>,
}

impl LoadError {
    fn single(kind: IssueKind, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![ConfigIssue {
                kind,
                path: path.into(),
                message: message.into(),
            }],
        }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        f.write_str(&lines.join("\n"))
    }
}

impl std::error::Error for LoadError {}

pub fn load(path: impl AsRef<Path>) -> Result<WorkflowDefinition, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError::single(IssueKind::Parse, "", format!("cannot read {}: {e}", path.display())))?;
    load_str(&text)
}

fn check_version(version: &str) -> Result<(), LoadError> {
    let parsed = semver::Version::parse(version)
        .map_err(|e| LoadError::single(IssueKind::Schema, "version", format!("`{version}`: {e}")))?;
    let supported = semver::VersionReq::parse("^1").expect("static requirement");
    if !supported.matches(&parsed) {
        return Err(LoadError::single(
            IssueKind::Schema,
            "version",
            format!("unsupported version `{version}`"),
        ));
    }
    Ok(())
}

fn registry_issue(path: String, e: ContractError) -> ConfigIssue {
    match e {
        ContractError::UnknownKind { .. } => ConfigIssue::cross_ref(path, e.to_string()),
        _ => ConfigIssue::schema(path, e.to_string()),
    }
}

pub fn load_str(text: &str) -> Result<WorkflowDefinition, LoadError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: WorkflowFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        if inner.is_syntax() || inner.is_eof() || inner.is_io() {
            LoadError::single(IssueKind::Parse, "", inner.to_string())
        } else {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            LoadError::single(IssueKind::Schema, path, inner.to_string())
        }
    })?;
    de.end()
        .map_err(|e| LoadError::single(IssueKind::Parse, "", e.to_string()))?;
    check_version(&file.version)?;

    let mut issues = Vec::new();
    let mut registry = ContractRegistry::new();
    for (i, kind) in file.registry.kinds.into_iter().enumerate() {
        if let Err(e) = registry.register_kind(kind) {
            issues.push(registry_issue(format!("registry.kinds[{i}]"), e));
        }
    }
    for (i, contract) in file.registry.contracts.into_iter().enumerate() {
        if let Err(e) = registry.register_contract(contract) {
            issues.push(registry_issue(format!("registry.contracts[{i}]"), e));
        }
    }
    // An unresolved role keeps a placeholder contract so the card stays
    // addressable; the definition check reports it at `cards[i].role`.
    let cards = file
        .cards
        .into_iter()
        .map(|c| AgentCard {
            contract: registry
                .contract(&c.role)
                .cloned()
                .unwrap_or_else(|| BehavioralContract::new(c.role.clone(), vec![], vec![])),
            agent_id: c.agent_id,
            endpoint: c.endpoint,
            modalities: c.modalities,
            auth: c.auth,
        })
        .collect();
    let def = WorkflowDefinition {
        name: file.name,
        registry,
        cards,
        lifecycle: file.lifecycle,
        topology: file.topology,
        stage_bindings: file.stage_bindings,
        max_rounds: file.max_rounds,
        enforcement: file.enforcement,
    };
    issues.extend(def.check());
    if issues.is_empty() {
        Ok(def)
    } else {
        Err(LoadError { issues })
    }
}

/// Serializes a definition in workflow-file form.
pub fn emit(def: &WorkflowDefinition) -> String {
    let file = WorkflowFile {
        version: FORMAT_VERSION.into(),
        name: def.name.clone(),
        registry: def.registry.to_document(),
        cards: def
            .cards
            .iter()
            .map(|c| CardEntry {
                agent_id: c.agent_id.clone(),
                role: c.contract.name.clone(),
                endpoint: c.endpoint.clone(),
                modalities: c.modalities.clone(),
                auth: c.auth.clone(),
            })
            .collect(),
        lifecycle: def.lifecycle.clone(),
        topology: def.topology.clone(),
        stage_bindings: def.stage_bindings.clone(),
        max_rounds: def.max_rounds,
        enforcement: def.enforcement,
    };
    let mut out = serde_json::to_string_pretty(&file).expect("workflow file serializes");
    out.push('\n');
    out
}

/// The registry seed: text kinds with one required `content` field, and
/// `verdict` with a `label` restricted to `vulnerable` or `safe`.
pub fn default_artifact_kinds() -> Vec<ArtifactKind> {
    let text = [
        "task_explanation",
        "implementation_plan",
        "code",
        "previous_code",
        "reviewing_outline",
        "review_log",
        "reviewer_comment",
        "test_report",
    ];
    let mut kinds: Vec<ArtifactKind> = text.iter().map(|k| ArtifactKind::text(*k)).collect();
    kinds.push(ArtifactKind::new(
        "verdict",
        vec![FieldSpec::required("label").with_allowed(["vulnerable", "safe"])],
    ));
    kinds.push(ArtifactKind::text(CONTROL_SIGNAL));
    kinds
}

/// Shipped development workflow: CEO hub, five roles, five rounds.
pub fn dev_default() -> WorkflowDefinition {
    load_str(DEV_DEFAULT).expect("shipped dev_default.json is valid")
}

/// Shipped detection workflow: three-voter panel, one round.
pub fn vuln_default() -> WorkflowDefinition {
    load_str(VULN_DEFAULT).expect("shipped vuln_default.json is valid")
}
