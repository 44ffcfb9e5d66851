//! Strict-majority voting over an odd panel.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    Safe,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Vulnerable => "vulnerable",
            Label::Safe => "safe",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Vulnerable => Label::Safe,
            Label::Safe => Label::Vulnerable,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vulnerable" => Ok(Label::Vulnerable),
            "safe" => Ok(Label::Safe),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub voter: String,
    pub label: Label,
}

impl Verdict {
    pub fn new(voter: impl Into<String>, label: Label) -> Self {
        Self {
            voter: voter.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("voter `{0}` voted more than once")]
    DuplicateVoter(String),
    #[error("panel of {0} cannot produce a strict majority")]
    EvenPanel(usize),
}

/// Majority label of an odd, nonempty list; `None` otherwise.
pub fn majority(labels: &[Label]) -> Option<Label> {
    if labels.len().is_multiple_of(2) {
        return None;
    }
    let vulnerable = labels.iter().filter(|l| **l == Label::Vulnerable).count();
    Some(if 2 * vulnerable > labels.len() {
        Label::Vulnerable
    } else {
        Label::Safe
    })
}

pub fn aggregate_votes(verdicts: &[Verdict]) -> Result<Label, VoteError> {
    let mut voters = BTreeSet::new();
    if let Some(dup) = verdicts.iter().find(|v| !voters.insert(v.voter.as_str())) {
        return Err(VoteError::DuplicateVoter(dup.voter.clone()));
    }
    let labels: Vec<Label> = verdicts.iter().map(|v| v.label).collect();
    majority(&labels).ok_or(VoteError::EvenPanel(verdicts.len()))
}
