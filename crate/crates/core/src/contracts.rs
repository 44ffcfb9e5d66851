//! Artifact kinds, behavioral contracts and agent cards.
//!
//! A [`BehavioralContract`] names the artifact kinds a role needs before it
//! runs (inputs, the pre-conditions) and the kinds it promises to produce
//! (outputs, the post-conditions). The [`ContractRegistry`] owns both the
//! kinds and the contracts and keeps them referentially closed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved sender id used when the engine itself talks to an agent.
pub const ENGINE_ID: &str = "engine";

/// Kind name for lifecycle notifications; accepted by every receiver.
pub const CONTROL_SIGNAL: &str = "control_signal";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("malformed kind `{kind}`: {reason}")]
    MalformedKind { kind: String, reason: String },
    #[error("kind `{0}` already registered with a different definition")]
    DuplicateKind(String),
    #[error("contract `{role}` references unregistered kind `{kind}`")]
    UnknownKind { role: String, kind: String },
    #[error("role `{0}` already registered")]
    DuplicateRole(String),
    #[error("contract `{0}` declares no outputs")]
    EmptyOutputs(String),
    #[error("malformed contract `{role}`: {reason}")]
    MalformedContract { role: String, reason: String },
    #[error("invalid `{kind}` artifact: {reason}")]
    InvalidArtifact { kind: String, reason: String },
}

/// True for lowercase snake-case identifiers such as `review_log`.
pub fn is_snake_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub required: bool,
    /// Closed set of admissible values, when the field is an enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

impl FieldSpec {
    pub fn required(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            required: true,
            allowed: None,
        }
    }

    pub fn optional(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            required: false,
            allowed: None,
        }
    }

    pub fn with_allowed<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed = Some(values.into_iter().map(Into::into).collect());
        self
    }
}

/// A schema-designated artifact type such as `code` or `review_log`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactKind {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl ArtifactKind {
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Self {
        Self {
            name: name.into(),
            fields,
        }
    }

    /// Kind with a single required `content` field.
    pub fn text(name: impl Into<String>) -> Self {
        Self::new(name, vec![FieldSpec::required("content")])
    }

    pub fn check_well_formed(&self) -> Result<(), ContractError> {
        let malformed = |reason: String| ContractError::MalformedKind {
            kind: self.name.clone(),
            reason,
        };
        if !is_snake_identifier(&self.name) {
            return Err(malformed("kind name must be a lowercase snake-case identifier".into()));
        }
        let mut seen = BTreeSet::new();
        for field in &self.fields {
            if !is_snake_identifier(&field.name) {
                return Err(malformed(format!("field name `{}` is not an identifier", field.name)));
            }
            if !seen.insert(field.name.as_str()) {
                return Err(malformed(format!("field `{}` declared twice", field.name)));
            }
            if matches!(&field.allowed, Some(values) if values.is_empty()) {
                return Err(malformed(format!("field `{}` allows no values", field.name)));
            }
        }
        Ok(())
    }

    fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Checks an artifact against this kind's field specs.
    pub fn validate(&self, artifact: &Artifact) -> Result<(), ContractError> {
        let invalid = |reason: String| ContractError::InvalidArtifact {
            kind: artifact.kind.clone(),
            reason,
        };
        if artifact.kind != self.name {
            return Err(invalid(format!("expected kind `{}`", self.name)));
        }
        for spec in &self.fields {
            match artifact.fields.get(&spec.name) {
                None if spec.required => return Err(invalid(format!("missing required field `{}`", spec.name))),
                Some(v) if spec.required && v.is_empty() => {
                    return Err(invalid(format!("required field `{}` is empty", spec.name)))
                }
                _ => {}
            }
        }
        for (name, value) in &artifact.fields {
            let Some(spec) = self.field(name) else {
                return Err(invalid(format!("unknown field `{name}`")));
            };
            if let Some(allowed) = &spec.allowed {
                if !allowed.iter().any(|a| a == value) {
                    return Err(invalid(format!("field `{name}` has disallowed value `{value}`")));
                }
            }
        }
        Ok(())
    }
}

/// A typed unit of work product. Field values are text; binary content is
/// carried base64-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub kind: String,
    pub fields: BTreeMap<String, String>,
}

impl Artifact {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with_field(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.fields.insert(name.into(), value.into());
        self
    }

    /// Artifact with a single `content` field.
    pub fn text(kind: impl Into<String>, content: impl Into<String>) -> Self {
        Self::new(kind).with_field("content", content)
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub kind: String,
    #[serde(default)]
    pub optional: bool,
}

impl InputSpec {
    pub fn required(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            optional: false,
        }
    }

    pub fn optional(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            optional: true,
        }
    }
}

/// `(name, inputs, outputs)` for one role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehavioralContract {
    pub name: String,
    pub inputs: Vec<InputSpec>,
    pub outputs: Vec<String>,
}

impl BehavioralContract {
    pub fn new(name: impl Into<String>, inputs: Vec<InputSpec>, outputs: Vec<String>) -> Self {
        Self {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    /// Inputs may be empty: a source role such as a user proxy needs nothing.
    pub fn check_well_formed(&self) -> Result<(), ContractError> {
        let malformed = |reason: &str| ContractError::MalformedContract {
            role: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(malformed("role name is empty"));
        }
        if self.outputs.is_empty() {
            return Err(ContractError::EmptyOutputs(self.name.clone()));
        }
        let mut seen = BTreeSet::new();
        if !self.inputs.iter().all(|i| seen.insert(i.kind.as_str())) {
            return Err(malformed("input kind repeated"));
        }
        let mut seen = BTreeSet::new();
        if !self.outputs.iter().all(|o| seen.insert(o.as_str())) {
            return Err(malformed("output kind repeated"));
        }
        Ok(())
    }

    pub fn required_inputs(&self) -> BTreeSet<&str> {
        self.inputs
            .iter()
            .filter(|i| !i.optional)
            .map(|i| i.kind.as_str())
            .collect()
    }

    pub fn accepts(&self, kind: &str) -> bool {
        self.inputs.iter().any(|i| i.kind == kind)
    }

    pub fn promises(&self, kind: &str) -> bool {
        self.outputs.iter().any(|o| o == kind)
    }

    fn referenced_kinds(&self) -> impl Iterator<Item = &str> {
        self.inputs
            .iter()
            .map(|i| i.kind.as_str())
            .chain(self.outputs.iter().map(String::as_str))
    }
}

/// Outcome of a pre- or post-condition check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conditions {
    /// All required kinds are present. `extra` lists produced kinds beyond
    /// the promised outputs (always empty for pre-conditions).
    Satisfied { extra: Vec<String> },
    /// Absent kinds, sorted lexicographically.
    Missing(Vec<String>),
}

impl Conditions {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Conditions::Satisfied { .. })
    }
}

/// Registered kinds and contracts; closed under kind references.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContractRegistry {
    kinds: IndexMap<String, ArtifactKind>,
    contracts: IndexMap<String, BehavioralContract>,
}

impl ContractRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_kind(&mut self, kind: ArtifactKind) -> Result<(), ContractError> {
        kind.check_well_formed()?;
        match self.kinds.get(&kind.name) {
            Some(existing) if *existing == kind => Ok(()),
            Some(_) => Err(ContractError::DuplicateKind(kind.name)),
            None => {
                self.kinds.insert(kind.name.clone(), kind);
                Ok(())
            }
        }
    }

    pub fn register_contract(&mut self, contract: BehavioralContract) -> Result<(), ContractError> {
        contract.check_well_formed()?;
        if self.contracts.contains_key(&contract.name) {
            return Err(ContractError::DuplicateRole(contract.name));
        }
        if let Some(kind) = contract.referenced_kinds().find(|k| !self.kinds.contains_key(*k)) {
            return Err(ContractError::UnknownKind {
                role: contract.name.clone(),
                kind: kind.to_string(),
            });
        }
        self.contracts.insert(contract.name.clone(), contract);
        Ok(())
    }

    pub fn kind(&self, name: &str) -> Option<&ArtifactKind> {
        self.kinds.get(name)
    }

    pub fn contract(&self, role: &str) -> Option<&BehavioralContract> {
        self.contracts.get(role)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &ArtifactKind> {
        self.kinds.values()
    }

    pub fn contracts(&self) -> impl Iterator<Item = &BehavioralContract> {
        self.contracts.values()
    }

    /// Validates one artifact against its registered kind.
    pub fn validate_artifact(&self, artifact: &Artifact) -> Result<(), ContractError> {
        match self.kinds.get(&artifact.kind) {
            Some(kind) => kind.validate(artifact),
            None => Err(ContractError::InvalidArtifact {
                kind: artifact.kind.clone(),
                reason: "kind is not registered".into(),
            }),
        }
    }

    /// True when every kind referenced by every contract resolves.
    pub fn is_closed(&self) -> bool {
        self.contracts
            .values()
            .all(|c| c.referenced_kinds().all(|k| self.kinds.contains_key(k)))
    }

    pub fn to_document(&self) -> RegistryDocument {
        RegistryDocument {
            kinds: self.kinds.values().cloned().collect(),
            contracts: self.contracts.values().cloned().collect(),
        }
    }

    /// Builds a registry from its document form, stopping at the first error.
    pub fn from_document(doc: RegistryDocument) -> Result<Self, ContractError> {
        let mut registry = Self::new();
        for kind in doc.kinds {
            registry.register_kind(kind)?;
        }
        for contract in doc.contracts {
            registry.register_contract(contract)?;
        }
        Ok(registry)
    }
}

/// JSON form of a registry: `{"kinds":[...],"contracts":[...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryDocument {
    pub kinds: Vec<ArtifactKind>,
    pub contracts: Vec<BehavioralContract>,
}

fn validate_all(registry: &ContractRegistry, artifacts: &[Artifact]) -> Result<(), ContractError> {
    artifacts.iter().try_for_each(|a| registry.validate_artifact(a))
}

fn present_kinds(artifacts: &[Artifact]) -> BTreeSet<&str> {
    artifacts.iter().map(|a| a.kind.as_str()).collect()
}

/// Satisfied iff every non-optional input kind has at least one artifact.
pub fn check_preconditions(
    registry: &ContractRegistry,
    contract: &BehavioralContract,
    available: &[Artifact],
) -> Result<Conditions, ContractError> {
    validate_all(registry, available)?;
    let present = present_kinds(available);
    let missing: Vec<String> = contract
        .required_inputs()
        .into_iter()
        .filter(|k| !present.contains(k))
        .map(str::to_string)
        .collect();
    Ok(if missing.is_empty() {
        Conditions::Satisfied { extra: Vec::new() }
    } else {
        Conditions::Missing(missing)
    })
}

/// Satisfied iff every promised output kind was produced. Kinds produced
/// beyond the promise are reported in `extra`, not treated as failure.
pub fn check_postconditions(
    registry: &ContractRegistry,
    contract: &BehavioralContract,
    produced: &[Artifact],
) -> Result<Conditions, ContractError> {
    validate_all(registry, produced)?;
    let present = present_kinds(produced);
    let outputs: BTreeSet<&str> = contract.outputs.iter().map(String::as_str).collect();
    let missing: Vec<String> = outputs.difference(&present).map(|k| k.to_string()).collect();
    if !missing.is_empty() {
        return Ok(Conditions::Missing(missing));
    }
    let extra = present.difference(&outputs).map(|k| k.to_string()).collect();
    Ok(Conditions::Satisfied { extra })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    File,
}

/// Where an agent is reached: inside the engine process or over HTTP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    InProcess,
    Url(url::Url),
}

impl Endpoint {
    pub const IN_PROCESS_TAG: &'static str = "in_process";

    pub fn parse(s: &str) -> Result<Self, url::ParseError> {
        if s == Self::IN_PROCESS_TAG {
            Ok(Endpoint::InProcess)
        } else {
            url::Url::parse(s).map(Endpoint::Url)
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::InProcess => f.write_str(Self::IN_PROCESS_TAG),
            Endpoint::Url(url) => f.write_str(url.as_str()),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Endpoint::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Machine-readable declaration of an agent, served at the well-known path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCard {
    pub contract: BehavioralContract,
    pub agent_id: String,
    pub endpoint: Endpoint,
    pub modalities: Vec<Modality>,
    /// Carried for interoperability; never enforced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
}

impl AgentCard {
    pub fn in_process(agent_id: impl Into<String>, contract: BehavioralContract) -> Self {
        Self {
            contract,
            agent_id: agent_id.into(),
            endpoint: Endpoint::InProcess,
            modalities: vec![Modality::Text],
            auth: None,
        }
    }
}
