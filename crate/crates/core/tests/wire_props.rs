use std::collections::BTreeMap;

use proptest::prelude::*;
use semap_core::contracts::{
    AgentCard, Artifact, ArtifactKind, BehavioralContract, ContractRegistry, FieldSpec, InputSpec, CONTROL_SIGNAL,
};
use semap_core::messaging::{decode, encode, validate_message, MessageError, TypedMessage, ViolationCode};

const GOLDEN: &str =
    r#"{"jsonrpc":"2.0","method":"run","id":0,"params":{"sender":"ceo","receiver":"coder","round":1,"payload":[]}}"#;

fn agent_id() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z][a-z0-9_]{0,11}",
        any::<String>().prop_filter("non-empty", |s| !s.is_empty()),
    ]
}

fn artifact() -> impl Strategy<Value = Artifact> {
    (
        prop_oneof!["[a-z][a-z_]{0,10}", any::<String>()],
        proptest::collection::btree_map(any::<String>(), any::<String>(), 0..5),
    )
        .prop_map(|(kind, fields)| Artifact { kind, fields })
}

fn message() -> impl Strategy<Value = TypedMessage> {
    (
        any::<u64>(),
        agent_id(),
        agent_id(),
        1..=u32::MAX,
        proptest::collection::vec(artifact(), 0..6),
    )
        .prop_filter("distinct endpoints", |(_, s, r, _, _)| s != r)
        .prop_map(|(id, s, r, round, payload)| TypedMessage::new(id, s, r, round, payload))
}

#[test]
fn golden_envelope_is_byte_exact() {
    let msg = TypedMessage::new(0, "ceo", "coder", 1, vec![]);
    assert_eq!(encode(&msg).unwrap(), GOLDEN.as_bytes());
    assert_eq!(decode(GOLDEN.as_bytes()).unwrap(), msg);
}

#[test]
fn golden_envelope_with_payload() {
    let msg = TypedMessage::new(
        7,
        "ceo",
        "coder",
        2,
        vec![Artifact::new("code")
            .with_field("language", "rust")
            .with_field("content", "fn main() {}")],
    );
    let expected = concat!(
        r#"{"jsonrpc":"2.0","method":"run","id":7,"params":{"sender":"ceo","receiver":"coder","round":2,"#,
        r#""payload":[{"kind":"code","fields":{"content":"fn main() {}","language":"rust"}}]}}"#
    );
    assert_eq!(String::from_utf8(encode(&msg).unwrap()).unwrap(), expected);
}

#[test]
fn decode_rejects_protocol_mismatch_and_truncation() {
    let wrong_version = GOLDEN.replace("\"2.0\"", "\"1.0\"");
    assert!(matches!(
        decode(wrong_version.as_bytes()),
        Err(MessageError::ProtocolMismatch(_))
    ));
    let wrong_method = GOLDEN.replace("\"run\"", "\"walk\"");
    assert!(matches!(
        decode(wrong_method.as_bytes()),
        Err(MessageError::ProtocolMismatch(_))
    ));
    let truncated = &GOLDEN.as_bytes()[..GOLDEN.len() - 3];
    assert!(matches!(decode(truncated), Err(MessageError::MalformedJson(_))));
    let no_params = r#"{"jsonrpc":"2.0","method":"run","id":0}"#;
    assert!(matches!(
        decode(no_params.as_bytes()),
        Err(MessageError::MissingField(_))
    ));
}

#[test]
fn decode_tolerates_whitespace_and_key_order() {
    let shuffled = r#"{ "params": {"payload": [], "round": 1, "receiver": "coder", "sender": "ceo"},
        "id": 0, "method": "run", "jsonrpc": "2.0" }"#;
    let msg = decode(shuffled.as_bytes()).unwrap();
    assert_eq!(encode(&msg).unwrap(), GOLDEN.as_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_inverts_encode(m in message()) {
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), m.clone());
        prop_assert_eq!(encode(&m).unwrap(), bytes.clone());
        let reparsed: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(serde_json::to_vec(&reparsed).unwrap().len(), bytes.len());
    }

    #[test]
    fn encode_rejects_broken_invariants(id in any::<u64>(), a in agent_id(), round in 1..10u32) {
        let echo = encode(&TypedMessage::new(id, a.clone(), a.clone(), round, vec![]));
        prop_assert!(matches!(echo, Err(MessageError::InvalidMessage(_))));
        let round_zero = encode(&TypedMessage::new(id, a.clone(), format!("{a}x"), 0, vec![]));
        prop_assert!(matches!(round_zero, Err(MessageError::InvalidMessage(_))));
    }
}

/// Field name, required flag and allowed values.
type Field = (String, bool, Option<Vec<String>>);

/// A small world of kinds and agents for the validator oracle.
#[derive(Debug, Clone)]
struct World {
    /// Per kind: (field name, required, allowed values).
    kinds: Vec<Vec<Field>>,
    /// Per agent: accepted kind indices.
    agents: Vec<Vec<usize>>,
}

fn field_name(i: usize) -> String {
    format!("f{i}")
}

fn world() -> impl Strategy<Value = World> {
    let field = (
        any::<bool>(),
        proptest::option::of(proptest::collection::vec("[ab]", 1..3)),
    );
    let kind = proptest::collection::vec(field, 0..4).prop_map(|fs| {
        fs.into_iter()
            .enumerate()
            .map(|(i, (req, allowed))| (field_name(i), req, allowed))
            .collect::<Vec<_>>()
    });
    (1..5usize)
        .prop_flat_map(move |n| {
            (
                proptest::collection::vec(kind.clone(), n),
                proptest::collection::vec(proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=n), 1..4),
            )
        })
        .prop_map(|(kinds, agents)| World { kinds, agents })
}

fn kind_name(i: usize) -> String {
    format!("k{i}")
}

fn agent_name(i: usize) -> String {
    format!("a{i}")
}

impl World {
    fn registry(&self) -> ContractRegistry {
        let mut r = ContractRegistry::new();
        r.register_kind(ArtifactKind::text(CONTROL_SIGNAL)).unwrap();
        for (i, fields) in self.kinds.iter().enumerate() {
            let specs = fields
                .iter()
                .map(|(name, req, allowed)| {
                    let spec = if *req {
                        FieldSpec::required(name)
                    } else {
                        FieldSpec::optional(name)
                    };
                    match allowed {
                        Some(values) => spec.with_allowed(values.clone()),
                        None => spec,
                    }
                })
                .collect();
            r.register_kind(ArtifactKind::new(kind_name(i), specs)).unwrap();
        }
        r
    }

    fn cards(&self) -> Vec<AgentCard> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, accepts)| {
                let contract = BehavioralContract::new(
                    format!("Role{i}"),
                    accepts.iter().map(|&k| InputSpec::required(kind_name(k))).collect(),
                    vec![CONTROL_SIGNAL.to_string()],
                );
                AgentCard::in_process(agent_name(i), contract)
            })
            .collect()
    }

    /// Independent schema check: every required field present and non-empty,
    /// no undeclared field, every constrained value allowed.
    fn schema_ok(&self, a: &Artifact) -> bool {
        if a.kind == CONTROL_SIGNAL {
            return a.fields.keys().eq(["content"]) && !a.fields["content"].is_empty();
        }
        let Some(idx) = (0..self.kinds.len()).find(|&i| kind_name(i) == a.kind) else {
            return false;
        };
        let spec: BTreeMap<&str, (bool, &Option<Vec<String>>)> = self.kinds[idx]
            .iter()
            .map(|(n, r, al)| (n.as_str(), (*r, al)))
            .collect();
        let required_ok = spec
            .iter()
            .filter(|(_, (req, _))| *req)
            .all(|(n, _)| a.fields.get(*n).is_some_and(|v| !v.is_empty()));
        let values_ok = a.fields.iter().all(|(n, v)| match spec.get(n.as_str()) {
            None => false,
            Some((_, None)) => true,
            Some((_, Some(allowed))) => allowed.contains(v),
        });
        required_ok && values_ok
    }

    fn oracle(&self, m: &TypedMessage) -> Vec<(ViolationCode, Option<usize>)> {
        let agent = |id: &str| (0..self.agents.len()).find(|&i| agent_name(i) == id);
        let mut out = Vec::new();
        if agent(&m.sender).is_none() {
            out.push((ViolationCode::UnknownSender, None));
        }
        let receiver = agent(&m.receiver);
        if receiver.is_none() {
            out.push((ViolationCode::UnknownReceiver, None));
        }
        for (i, a) in m.payload.iter().enumerate() {
            if !self.schema_ok(a) {
                out.push((ViolationCode::SchemaViolation, Some(i)));
            } else if let Some(r) = receiver {
                let accepted = self.agents[r].iter().any(|&k| kind_name(k) == a.kind);
                if a.kind != CONTROL_SIGNAL && !accepted {
                    out.push((ViolationCode::UnexpectedKind, Some(i)));
                }
            }
        }
        out
    }
}

fn probe_artifact() -> impl Strategy<Value = Artifact> {
    let kind = prop_oneof![
        4 => (0..6usize).prop_map(kind_name),
        1 => Just(CONTROL_SIGNAL.to_string()),
    ];
    let fields = proptest::collection::btree_map(
        prop_oneof![4 => (0..4usize).prop_map(field_name), 1 => Just("content".to_string())],
        prop_oneof![
            Just(String::new()),
            Just("a".to_string()),
            Just("b".to_string()),
            Just("c".to_string())
        ],
        0..4,
    );
    (kind, fields).prop_map(|(kind, fields)| Artifact { kind, fields })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn validator_matches_oracle(
        w in world(),
        sender in 0..5usize,
        receiver in 0..5usize,
        payload in proptest::collection::vec(probe_artifact(), 0..6),
    ) {
        prop_assume!(sender != receiver);
        let msg = TypedMessage::new(1, agent_name(sender), agent_name(receiver), 1, payload);
        let got: Vec<_> = validate_message(&w.registry(), &w.cards(), &msg)
            .into_iter()
            .map(|v| (v.code, v.artifact))
            .collect();
        prop_assert_eq!(got, w.oracle(&msg));
    }
}
