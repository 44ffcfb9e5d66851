//! Execution traces and the rule-based failure classifier.
//!
//! A trace is an ordered list of sequence-numbered, round-stamped events,
//! serialized one JSON object per line. [`classify`] maps triggering events
//! onto three failure categories with a fixed rule table; [`report`] and
//! [`emit_csv`] turn the records into per-round counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::Artifact;
use crate::lifecycle::PASS;
use crate::messaging::ViolationCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    ExtraOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    MessageSent {
        message_id: u64,
        sender: String,
        receiver: String,
        payload: Vec<Artifact>,
    },
    MessageBlocked {
        message_id: u64,
        sender: String,
        receiver: String,
        reasons: Vec<String>,
        payload: Vec<Artifact>,
    },
    ValidationViolation {
        message_id: u64,
        code: ViolationCode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        artifact: Option<usize>,
        detail: String,
    },
    PreconditionMiss {
        agent: String,
        missing: Vec<String>,
    },
    /// `missing`: promised kinds absent from the reply. `malformed`: promised
    /// kinds present but failing their schema. `substituted`: the reply put
    /// unpromised kinds where promised ones were missing.
    PostconditionMiss {
        agent: String,
        missing: Vec<String>,
        malformed: Vec<String>,
        substituted: bool,
    },
    VerifierOutcome {
        state: String,
        verifier: String,
        outcome: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        claim: Option<String>,
        /// Ground-truth outcome or label attached by the scenario.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected: Option<String>,
    },
    Transition {
        from: String,
        outcome: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        terminal: Option<TerminalKind>,
    },
    ForcedExhaustion {
        state: String,
        max_rounds: u32,
    },
    Warning {
        agent: String,
        code: WarningCode,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub round: u32,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

fn malformed(msg: impl Into<String>) -> TraceError {
    TraceError::MalformedTrace(msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub workflow_id: String,
    pub events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    pub fn new(workflow_id: impl Into<String>) -> Self {
        Self {
            workflow_id: workflow_id.into(),
            events: Vec::new(),
        }
    }

    /// Appends an event with the next sequence number and returns it.
    pub fn record(&mut self, round: u32, event: Event) -> u64 {
        let seq = self.events.last().map_or(0, |e| e.seq + 1);
        self.events.push(TraceEvent { seq, round, event });
        seq
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(workflow_id: impl Into<String>, text: &str) -> Result<Self, TraceError> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<TraceEvent>, _>>()?;
        Ok(Self {
            workflow_id: workflow_id.into(),
            events,
        })
    }

    /// Strictly increasing sequence numbers, non-decreasing rounds and
    /// exactly one transition into a terminal state, which is the last
    /// transition.
    pub fn check_invariants(&self) -> Result<(), TraceError> {
        for pair in self.events.windows(2) {
            if pair[1].seq <= pair[0].seq {
                return Err(malformed(format!("sequence {} follows {}", pair[1].seq, pair[0].seq)));
            }
            if pair[1].round < pair[0].round {
                return Err(malformed(format!("round decreases at sequence {}", pair[1].seq)));
            }
        }
        let transitions: Vec<&Option<TerminalKind>> = self
            .events
            .iter()
            .filter_map(|e| match &e.event {
                Event::Transition { terminal, .. } => Some(terminal),
                _ => None,
            })
            .collect();
        let terminal_count = transitions.iter().filter(|t| t.is_some()).count();
        if terminal_count != 1 || !matches!(transitions.last(), Some(Some(_))) {
            return Err(malformed(
                "trace must end with exactly one transition into a terminal state",
            ));
        }
        Ok(())
    }

    pub fn event(&self, seq: u64) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.seq == seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    UnderSpecification,
    InterAgentMisalignment,
    TaskVerification,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::UnderSpecification,
        Category::InterAgentMisalignment,
        Category::TaskVerification,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::UnderSpecification => "under_specification",
            Category::InterAgentMisalignment => "inter_agent_misalignment",
            Category::TaskVerification => "task_verification",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub category: Category,
    pub round: u32,
    /// Sequence number of the triggering event.
    pub evidence: u64,
    pub detail: String,
}

const MISALIGNMENT_CODES: [ViolationCode; 4] = [
    ViolationCode::SchemaViolation,
    ViolationCode::UnexpectedKind,
    ViolationCode::HubBypass,
    ViolationCode::UnknownReceiver,
];

/// Applies the rule table to every event; one record per triggering event,
/// ordered by evidence sequence number.
pub fn classify(trace: &ExecutionTrace) -> Result<Vec<FailureRecord>, TraceError> {
    trace.check_invariants()?;
    let mut records = Vec::new();
    for (i, e) in trace.events.iter().enumerate() {
        let hit = match &e.event {
            Event::PreconditionMiss { agent, missing } => Some((
                Category::UnderSpecification,
                format!("`{agent}` invoked without {}", missing.join(", ")),
            )),
            Event::PostconditionMiss {
                agent,
                missing,
                malformed,
                substituted,
            } => {
                if !malformed.is_empty() {
                    Some((
                        Category::UnderSpecification,
                        format!("`{agent}` produced malformed {}", malformed.join(", ")),
                    ))
                } else if !missing.is_empty() && !substituted {
                    Some((
                        Category::UnderSpecification,
                        format!("`{agent}` omitted {}", missing.join(", ")),
                    ))
                } else {
                    None
                }
            }
            Event::ValidationViolation {
                message_id,
                code,
                detail,
                ..
            } if MISALIGNMENT_CODES.contains(code) => Some((
                Category::InterAgentMisalignment,
                format!("message {message_id}: {code}: {detail}"),
            )),
            Event::Transition {
                from,
                to,
                terminal: Some(TerminalKind::Success),
                ..
            } if !verified_pass_before(trace, i, from, e.round) => Some((
                Category::TaskVerification,
                format!("`{from}` reached `{to}` without a passing verification"),
            )),
            Event::ForcedExhaustion { state, max_rounds } => Some((
                Category::TaskVerification,
                format!("rounds exhausted in `{state}` after {max_rounds} rounds"),
            )),
            Event::VerifierOutcome {
                state,
                outcome,
                claim,
                expected: Some(expected),
                ..
            } => {
                let decided = claim.as_deref().unwrap_or(outcome);
                (decided != expected).then(|| {
                    (
                        Category::TaskVerification,
                        format!("`{state}` verified as `{decided}`, ground truth `{expected}`"),
                    )
                })
            }
            _ => None,
        };
        if let Some((category, detail)) = hit {
            records.push(FailureRecord {
                category,
                round: e.round,
                evidence: e.seq,
                detail,
            });
        }
    }
    Ok(records)
}

fn verified_pass_before(trace: &ExecutionTrace, index: usize, state: &str, round: u32) -> bool {
    trace.events[..index]
        .iter()
        .rev()
        .take_while(|e| e.round == round)
        .any(|e| matches!(&e.event, Event::VerifierOutcome { state: s, outcome, .. } if s == state && outcome == PASS))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub under_specification: u64,
    pub inter_agent_misalignment: u64,
    pub task_verification: u64,
}

impl CategoryCounts {
    pub fn get(&self, c: Category) -> u64 {
        self.as_array()[c.index()]
    }

    fn add(&mut self, c: Category, n: u64) {
        match c {
            Category::UnderSpecification => self.under_specification += n,
            Category::InterAgentMisalignment => self.inter_agent_misalignment += n,
            Category::TaskVerification => self.task_verification += n,
        }
    }

    pub fn as_array(&self) -> [u64; 3] {
        [
            self.under_specification,
            self.inter_agent_misalignment,
            self.task_verification,
        ]
    }

    pub fn total(&self) -> u64 {
        self.as_array().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReport {
    pub max_rounds: u32,
    pub per_round: BTreeMap<u32, CategoryCounts>,
    pub per_category_totals: CategoryCounts,
    pub total: u64,
}

impl FailureReport {
    /// Rows emitted in CSV form: `1..=max_rounds`, extended when a record
    /// falls beyond the budget.
    pub fn rounds(&self) -> u32 {
        self.per_round
            .keys()
            .next_back()
            .copied()
            .unwrap_or(0)
            .max(self.max_rounds)
    }
}

pub fn report(records: &[FailureRecord], max_rounds: u32) -> FailureReport {
    let mut per_round: BTreeMap<u32, CategoryCounts> =
        (1..=max_rounds).map(|r| (r, CategoryCounts::default())).collect();
    let mut totals = CategoryCounts::default();
    for r in records {
        per_round.entry(r.round).or_default().add(r.category, 1);
        totals.add(r.category, 1);
    }
    let last = per_round.keys().next_back().copied().unwrap_or(0);
    for round in 1..last {
        per_round.entry(round).or_default();
    }
    FailureReport {
        max_rounds,
        per_round,
        total: totals.total(),
        per_category_totals: totals,
    }
}

pub const CSV_HEADER: &str = "round,under_specification,inter_agent_misalignment,task_verification";

pub fn emit_csv(report: &FailureReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let row = |label: &str, c: &CategoryCounts| {
        format!(
            "{label},{},{},{}\n",
            c.under_specification, c.inter_agent_misalignment, c.task_verification
        )
    };
    for round in 1..=report.rounds() {
        let counts = report.per_round.get(&round).copied().unwrap_or_default();
        out.push_str(&row(&round.to_string(), &counts));
    }
    out.push_str(&row("total", &report.per_category_totals));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CsvError {
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

/// Parses the output of [`emit_csv`] back into a report.
pub fn parse_csv(text: &str) -> Result<FailureReport, CsvError> {
    let bad = |line: usize, reason: &str| CsvError::Invalid {
        line,
        reason: reason.into(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header")),
    }
    let mut per_round = BTreeMap::new();
    let mut totals = None;
    for (n, line) in lines {
        if totals.is_some() {
            return Err(bad(n, "row after total"));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(n, "expected 4 columns"));
        }
        let mut counts = [0u64; 3];
        for (slot, col) in counts.iter_mut().zip(&cols[1..]) {
            *slot = col.parse().map_err(|_| bad(n, "count is not an unsigned integer"))?;
        }
        let counts = CategoryCounts {
            under_specification: counts[0],
            inter_agent_misalignment: counts[1],
            task_verification: counts[2],
        };
        if cols[0] == "total" {
            totals = Some(counts);
        } else {
            let round: u32 = cols[0].parse().map_err(|_| bad(n, "round is not an integer"))?;
            if round as usize != per_round.len() + 1 {
                return Err(bad(n, "rounds must run 1, 2, ... in order"));
            }
            per_round.insert(round, counts);
        }
    }
    let totals = totals.ok_or_else(|| bad(0, "missing total row"))?;
    let mut sum = CategoryCounts::default();
    for c in per_round.values() {
        for cat in Category::ALL {
            sum.add(cat, c.get(cat));
        }
    }
    if sum != totals {
        return Err(bad(0, "total row does not match per-round rows"));
    }
    Ok(FailureReport {
        max_rounds: per_round.len() as u32,
        per_round,
        total: totals.total(),
        per_category_totals: totals,
    })
}

/// A percentage held in tenths, so `641` displays as `64.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeltaPercent(pub i64);

impl DeltaPercent {
    /// `100 * (permissive - strict) / permissive`, rounded half-up to one
    /// decimal, with `0/0` defined as zero.
    pub fn between(permissive: u64, strict: u64) -> Self {
        if permissive == 0 {
            return DeltaPercent(0);
        }
        let num = 1000 * (permissive as i128 - strict as i128);
        let den = permissive as i128;
        DeltaPercent((2 * num + den).div_euclid(2 * den) as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for DeltaPercent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

impl FromStr for DeltaPercent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (neg, body) = s.strip_prefix('-').map_or((false, s), |b| (true, b));
        let (int, frac) = body.split_once('.').ok_or("expected one decimal place")?;
        if frac.len() != 1 {
            return Err("expected one decimal place".into());
        }
        let tenths: i64 = format!("{int}{frac}").parse().map_err(|_| "not a number")?;
        Ok(DeltaPercent(if neg { -tenths } else { tenths }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRow {
    /// A category name, or `total`.
    pub label: String,
    pub permissive: u64,
    pub strict: u64,
    pub delta: DeltaPercent,
}

/// Per-category and total reductions of `strict` relative to `permissive`.
pub fn compare_reports(strict: &FailureReport, permissive: &FailureReport) -> Vec<ComparisonRow> {
    let row = |label: &str, p: u64, s: u64| ComparisonRow {
        label: label.to_string(),
        permissive: p,
        strict: s,
        delta: DeltaPercent::between(p, s),
    };
    let mut rows: Vec<ComparisonRow> = Category::ALL
        .iter()
        .map(|c| {
            row(
                c.as_str(),
                permissive.per_category_totals.get(*c),
                strict.per_category_totals.get(*c),
            )
        })
        .collect();
    rows.push(row("total", permissive.total, strict.total));
    rows
}
