//! Verdict claims carried inside artifacts.
//!
//! Review logs and test reports open with a `PASS` or `FAIL` token;
//! `verdict` artifacts carry a `label` field. Verifiers read these claims,
//! the strict engine audits them and the `WrongVerdict` fault flips them.

use crate::contracts::Artifact;
use crate::orchestration::voting::Label;

/// Kinds whose `content` opens with a pass/fail token.
pub const REPORT_KINDS: [&str; 2] = ["test_report", "review_log"];
pub const VERDICT_KIND: &str = "verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Pass,
    Fail,
    Label(Label),
}

impl Claim {
    /// The outcome or label name this claim asserts.
    pub fn as_str(&self) -> &'static str {
        match self {
            Claim::Pass => crate::lifecycle::PASS,
            Claim::Fail => crate::lifecycle::FAIL,
            Claim::Label(l) => l.as_str(),
        }
    }
}

fn leading_token(content: &str) -> &str {
    content.split_whitespace().next().unwrap_or("")
}

/// The claim an artifact makes, if it is claim-bearing. A report whose
/// first token is not `PASS` counts as a failing claim.
pub fn claim_of(artifact: &Artifact) -> Option<Claim> {
    if REPORT_KINDS.contains(&artifact.kind.as_str()) {
        let token = leading_token(artifact.field("content").unwrap_or(""));
        return Some(if token.eq_ignore_ascii_case("pass") {
            Claim::Pass
        } else {
            Claim::Fail
        });
    }
    if artifact.kind == VERDICT_KIND {
        return artifact.field("label").and_then(|l| l.parse().ok()).map(Claim::Label);
    }
    None
}

/// The same artifact asserting the opposite claim, or `None` when the
/// artifact carries no claim.
pub fn flipped(artifact: &Artifact) -> Option<Artifact> {
    let mut out = artifact.clone();
    match claim_of(artifact)? {
        Claim::Label(l) => {
            out.fields.insert("label".into(), l.opposite().as_str().into());
        }
        claim => {
            let content = artifact.field("content").unwrap_or("");
            let rest = content.trim_start();
            let rest = &rest[leading_token(rest).len()..];
            let token = if claim == Claim::Pass { "FAIL" } else { "PASS" };
            out.fields.insert("content".into(), format!("{token}{rest}"));
        }
    }
    Some(out)
}
