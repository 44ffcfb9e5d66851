//! Typed inter-agent messages, payload validation and the JSON-RPC 2.0
//! wire envelope.
//!
//! The envelope layout is byte-exact: keys appear in the order
//! `jsonrpc, method, id, params` and inside `params` as
//! `sender, receiver, round, payload`; artifact fields are sorted by name;
//! no insignificant whitespace is emitted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::contracts::{AgentCard, Artifact, ContractRegistry, CONTROL_SIGNAL};

pub const JSONRPC_VERSION: &str = "2.0";
pub const RUN_METHOD: &str = "run";

/// `(sender, receiver, payload)` plus a trace-scoped id and the round it
/// was sent in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedMessage {
    pub message_id: u64,
    pub sender: String,
    pub receiver: String,
    pub round: u32,
    pub payload: Vec<Artifact>,
}

impl TypedMessage {
    pub fn new(
        message_id: u64,
        sender: impl Into<String>,
        receiver: impl Into<String>,
        round: u32,
        payload: Vec<Artifact>,
    ) -> Self {
        Self {
            message_id,
            sender: sender.into(),
            receiver: receiver.into(),
            round,
            payload,
        }
    }

    /// Structural invariants that do not need a registry.
    pub fn check_invariants(&self) -> Result<(), MessageError> {
        if self.sender.is_empty() || self.receiver.is_empty() {
            return Err(MessageError::InvalidMessage("empty agent id".into()));
        }
        if self.sender == self.receiver {
            return Err(MessageError::InvalidMessage(format!(
                "sender and receiver are both `{}`",
                self.sender
            )));
        }
        if self.round == 0 {
            return Err(MessageError::InvalidMessage("round must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has the wrong type: expected {expected}")]
    WrongType { field: String, expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    UnknownSender,
    UnknownReceiver,
    SchemaViolation,
    UnexpectedKind,
    HubBypass,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Payload position the violation refers to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<usize>,
    pub detail: String,
}

/// Checks a message against the registry and the known cards.
///
/// Each payload artifact yields at most one violation: a schema failure
/// masks the receiver-acceptance check for the same artifact. Payload order
/// carries no meaning here.
pub fn validate_message(registry: &ContractRegistry, cards: &[AgentCard], msg: &TypedMessage) -> Vec<Violation> {
    let find = |id: &str| cards.iter().find(|c| c.agent_id == id);
    let mut violations = Vec::new();
    if find(&msg.sender).is_none() {
        violations.push(Violation {
            code: ViolationCode::UnknownSender,
            artifact: None,
            detail: format!("sender `{}` has no card", msg.sender),
        });
    }
    let receiver = find(&msg.receiver);
    if receiver.is_none() {
        violations.push(Violation {
            code: ViolationCode::UnknownReceiver,
            artifact: None,
            detail: format!("receiver `{}` has no card", msg.receiver),
        });
    }
    for (i, artifact) in msg.payload.iter().enumerate() {
        if let Err(e) = registry.validate_artifact(artifact) {
            violations.push(Violation {
                code: ViolationCode::SchemaViolation,
                artifact: Some(i),
                detail: e.to_string(),
            });
            continue;
        }
        if let Some(card) = receiver {
            if artifact.kind != CONTROL_SIGNAL && !card.contract.accepts(&artifact.kind) {
                violations.push(Violation {
                    code: ViolationCode::UnexpectedKind,
                    artifact: Some(i),
                    detail: format!("`{}` does not accept kind `{}`", card.contract.name, artifact.kind),
                });
            }
        }
    }
    violations
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    jsonrpc: &'static str,
    method: &'static str,
    id: u64,
    params: ParamsOut<'a>,
}

#[derive(Serialize)]
struct ParamsOut<'a> {
    sender: &'a str,
    receiver: &'a str,
    round: u32,
    payload: &'a [Artifact],
}

/// Encodes a message as a compact JSON-RPC `run` request.
pub fn encode(msg: &TypedMessage) -> Result<Vec<u8>, MessageError> {
    msg.check_invariants()?;
    let envelope = EnvelopeOut {
        jsonrpc: JSONRPC_VERSION,
        method: RUN_METHOD,
        id: msg.message_id,
        params: ParamsOut {
            sender: &msg.sender,
            receiver: &msg.receiver,
            round: msg.round,
            payload: &msg.payload,
        },
    };
    serde_json::to_vec(&envelope).map_err(|e| MessageError::InvalidMessage(e.to_string()))
}

fn get<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value, MessageError> {
    obj.get(key).ok_or_else(|| MessageError::MissingField(key.to_string()))
}

fn as_str<'a>(v: &'a Value, field: &str) -> Result<&'a str, MessageError> {
    v.as_str().ok_or_else(|| MessageError::WrongType {
        field: field.into(),
        expected: "string",
    })
}

fn as_u64(v: &Value, field: &str) -> Result<u64, MessageError> {
    v.as_u64().ok_or_else(|| MessageError::WrongType {
        field: field.into(),
        expected: "unsigned integer",
    })
}

fn as_object<'a>(v: &'a Value, field: &str) -> Result<&'a serde_json::Map<String, Value>, MessageError> {
    v.as_object().ok_or_else(|| MessageError::WrongType {
        field: field.into(),
        expected: "object",
    })
}

fn decode_artifact(v: &Value, at: usize) -> Result<Artifact, MessageError> {
    let path = format!("params.payload[{at}]");
    let obj = as_object(v, &path)?;
    let kind = as_str(
        get(obj, "kind").map_err(|_| MessageError::MissingField(format!("{path}.kind")))?,
        &format!("{path}.kind"),
    )?;
    let fields_v = get(obj, "fields").map_err(|_| MessageError::MissingField(format!("{path}.fields")))?;
    let mut fields = BTreeMap::new();
    for (name, value) in as_object(fields_v, &format!("{path}.fields"))? {
        fields.insert(
            name.clone(),
            as_str(value, &format!("{path}.fields.{name}"))?.to_string(),
        );
    }
    Ok(Artifact {
        kind: kind.to_string(),
        fields,
    })
}

/// Decodes a `run` request. Accepts any key order and whitespace; strict on
/// the protocol literals and on field types.
pub fn decode(bytes: &[u8]) -> Result<TypedMessage, MessageError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| MessageError::MalformedJson(e.to_string()))?;
    decode_value(&value)
}

pub(crate) fn decode_value(value: &Value) -> Result<TypedMessage, MessageError> {
    let root = value
        .as_object()
        .ok_or_else(|| MessageError::MalformedJson("envelope is not an object".into()))?;
    let version = get(root, "jsonrpc")?;
    if version.as_str() != Some(JSONRPC_VERSION) {
        return Err(MessageError::ProtocolMismatch(format!(
            "jsonrpc is {version}, expected \"2.0\""
        )));
    }
    let method = get(root, "method")?;
    if method.as_str() != Some(RUN_METHOD) {
        return Err(MessageError::ProtocolMismatch(format!(
            "method is {method}, expected \"run\""
        )));
    }
    let message_id = as_u64(get(root, "id")?, "id")?;
    let params = as_object(get(root, "params")?, "params")?;
    let field = |k: &str| get(params, k).map_err(|_| MessageError::MissingField(format!("params.{k}")));
    let sender = as_str(field("sender")?, "params.sender")?.to_string();
    let receiver = as_str(field("receiver")?, "params.receiver")?.to_string();
    let round = u32::try_from(as_u64(field("round")?, "params.round")?).map_err(|_| MessageError::WrongType {
        field: "params.round".into(),
        expected: "u32",
    })?;
    let payload = field("payload")?
        .as_array()
        .ok_or_else(|| MessageError::WrongType {
            field: "params.payload".into(),
            expected: "array",
        })?
        .iter()
        .enumerate()
        .map(|(i, v)| decode_artifact(v, i))
        .collect::<Result<Vec<_>, _>>()?;
    let msg = TypedMessage {
        message_id,
        sender,
        receiver,
        round,
        payload,
    };
    msg.check_invariants()?;
    Ok(msg)
}
