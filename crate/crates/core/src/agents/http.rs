//! HTTP carriage for agents.
//!
//! A served agent answers `GET /.well-known/agent-card` with its card and
//! `POST /` with a JSON-RPC `run` envelope. Requests are handled one at a
//! time per agent.

use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tiny_http::{Header, Method, Response, Server};
use url::Url;

use super::{Agent, AgentError, AgentInvocation};
use crate::contracts::{AgentCard, Artifact, ENGINE_ID};
use crate::messaging::{self, TypedMessage, JSONRPC_VERSION};

pub const AGENT_CARD_PATH: &str = "/.well-known/agent-card";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// JSON-RPC error code for envelopes that cannot be accepted.
pub const INVALID_REQUEST: i64 = -32600;
/// JSON-RPC error code for failures inside the agent.
pub const AGENT_FAILURE: i64 = -32000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("no response within {0:?}")]
    TransportTimeout(Duration),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("remote error {code}: {message}")]
    RemoteError { code: i64, message: String },
}

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {reason}")]
pub struct BindFailure {
    pub addr: String,
    pub reason: String,
}

#[derive(Serialize)]
struct RpcResult<'a> {
    jsonrpc: &'static str,
    id: u64,
    result: ResultOut<'a>,
}

#[derive(Serialize)]
struct ResultOut<'a> {
    payload: &'a [Artifact],
}

#[derive(Deserialize)]
struct ResultIn {
    payload: Vec<Artifact>,
}

#[derive(Serialize, Deserialize)]
struct RpcErrorBody {
    code: i64,
    message: String,
}

#[derive(Serialize)]
struct RpcError {
    jsonrpc: &'static str,
    id: Value,
    error: RpcErrorBody,
}

/// A running agent server; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> Url {
        Url::parse(&format!("http://{}/", self.addr)).expect("socket address forms a URL")
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn json_response(body: Vec<u8>, status: u16) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    Response::from_data(body).with_status_code(status).with_header(header)
}

fn error_body(id: Value, code: i64, message: String) -> Vec<u8> {
    serde_json::to_vec(&RpcError {
        jsonrpc: JSONRPC_VERSION,
        id,
        error: RpcErrorBody { code, message },
    })
    .expect("error object serializes")
}

/// Handles one `POST /` body, returning the JSON-RPC response document.
pub fn handle_rpc(agent: &dyn Agent, body: &[u8]) -> Vec<u8> {
    let parsed: Option<Value> = serde_json::from_slice(body).ok();
    let id = parsed
        .as_ref()
        .and_then(|v| v.get("id"))
        .cloned()
        .unwrap_or(Value::Null);
    let msg = match parsed.as_ref() {
        Some(v) => messaging::decode_value(v),
        None => messaging::decode(body),
    };
    let msg = match msg {
        Ok(m) => m,
        Err(e) => return error_body(id, INVALID_REQUEST, e.to_string()),
    };
    let invocation = AgentInvocation::new(msg.payload, msg.round);
    match agent.invoke(&invocation) {
        Ok(payload) => serde_json::to_vec(&RpcResult {
            jsonrpc: JSONRPC_VERSION,
            id: msg.message_id,
            result: ResultOut { payload: &payload },
        })
        .expect("result serializes"),
        Err(e) => error_body(Value::from(msg.message_id), AGENT_FAILURE, e.to_string()),
    }
}

pub fn serve_agent(agent: Arc<dyn Agent>, addr: impl ToSocketAddrs) -> Result<ServerHandle, BindFailure> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| BindFailure {
            addr: "<unresolved>".into(),
            reason: e.to_string(),
        })?
        .collect();
    let label = addrs.first().map_or_else(|| "<none>".to_string(), |a| a.to_string());
    let server = Server::http(&addrs[..]).map_err(|e| BindFailure {
        addr: label.clone(),
        reason: e.to_string(),
    })?;
    let bound = server.server_addr().to_ip().ok_or_else(|| BindFailure {
        addr: label,
        reason: "not an IP listener".into(),
    })?;
    let server = Arc::new(server);
    let worker = Arc::clone(&server);
    let card = serde_json::to_vec(agent.card()).expect("card serializes");
    let thread = std::thread::spawn(move || {
        for mut request in worker.incoming_requests() {
            let response = match (request.method(), request.url()) {
                (Method::Get, AGENT_CARD_PATH) => json_response(card.clone(), 200),
                (Method::Post, "/") => {
                    let mut body = Vec::new();
                    match request.as_reader().read_to_end(&mut body) {
                        Ok(_) => json_response(handle_rpc(agent.as_ref(), &body), 200),
                        Err(e) => json_response(error_body(Value::Null, INVALID_REQUEST, e.to_string()), 400),
                    }
                }
                _ => json_response(br#"{"error":"not found"}"#.to_vec(), 404),
            };
            if let Err(e) = request.respond(response) {
                tracing::debug!("agent server failed to respond: {e}");
            }
        }
    });
    Ok(ServerHandle {
        addr: bound,
        server,
        thread: Some(thread),
    })
}

fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn transport_error(e: ureq::Error, timeout: Duration) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::TransportTimeout(timeout),
        other => TransportError::TransportError(other.to_string()),
    }
}

/// Encodes `msg`, posts it to `endpoint` and decodes the returned payload.
pub fn remote_invoke(endpoint: &Url, msg: &TypedMessage, timeout: Duration) -> Result<Vec<Artifact>, TransportError> {
    let body = messaging::encode(msg).map_err(|e| TransportError::TransportError(e.to_string()))?;
    let mut response = http_agent(timeout)
        .post(endpoint.as_str())
        .header("Content-Type", "application/json")
        .send(&body[..])
        .map_err(|e| transport_error(e, timeout))?;
    let bytes = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| transport_error(e, timeout))?;
    let reply: Value = serde_json::from_slice(&bytes)
        .map_err(|e| TransportError::TransportError(format!("unparseable response: {e}")))?;
    if reply.get("jsonrpc").and_then(Value::as_str) != Some(JSONRPC_VERSION) {
        return Err(TransportError::TransportError("response is not JSON-RPC 2.0".into()));
    }
    if let Some(err) = reply.get("error") {
        let err: RpcErrorBody = serde_json::from_value(err.clone())
            .map_err(|e| TransportError::TransportError(format!("bad error object: {e}")))?;
        return Err(TransportError::RemoteError {
            code: err.code,
            message: err.message,
        });
    }
    if reply.get("id").and_then(Value::as_u64) != Some(msg.message_id) {
        return Err(TransportError::TransportError(
            "response id does not match request".into(),
        ));
    }
    let result: ResultIn = reply
        .get("result")
        .cloned()
        .ok_or_else(|| TransportError::TransportError("response has neither result nor error".into()))
        .and_then(|r| serde_json::from_value(r).map_err(|e| TransportError::TransportError(e.to_string())))?;
    Ok(result.payload)
}

/// Fetches the card published under `base`.
pub fn fetch_card(base: &Url, timeout: Duration) -> Result<AgentCard, TransportError> {
    let url = base
        .join(AGENT_CARD_PATH)
        .map_err(|e| TransportError::TransportError(e.to_string()))?;
    let mut response = http_agent(timeout)
        .get(url.as_str())
        .call()
        .map_err(|e| transport_error(e, timeout))?;
    if response.status() != 200 {
        return Err(TransportError::TransportError(format!("status {}", response.status())));
    }
    let bytes = response
        .body_mut()
        .read_to_vec()
        .map_err(|e| transport_error(e, timeout))?;
    serde_json::from_slice(&bytes).map_err(|e| TransportError::TransportError(e.to_string()))
}

/// An agent reached over HTTP. Invocations are sent from the engine's
/// reserved id with per-agent sequential message ids.
pub struct RemoteAgent {
    card: AgentCard,
    endpoint: Url,
    timeout: Duration,
    next_id: AtomicU64,
}

impl RemoteAgent {
    pub fn new(card: AgentCard, endpoint: Url, timeout: Duration) -> Self {
        Self {
            card,
            endpoint,
            timeout,
            next_id: AtomicU64::new(0),
        }
    }
}

impl Agent for RemoteAgent {
    fn card(&self) -> &AgentCard {
        &self.card
    }

    fn invoke(&self, invocation: &AgentInvocation) -> Result<Vec<Artifact>, AgentError> {
        let msg = TypedMessage::new(
            self.next_id.fetch_add(1, Ordering::Relaxed),
            ENGINE_ID,
            self.card.agent_id.clone(),
            invocation.round,
            invocation.inputs.clone(),
        );
        Ok(remote_invoke(&self.endpoint, &msg, self.timeout)?)
    }
}
