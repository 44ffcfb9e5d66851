//! The `semap` command line: validate workflow files, run scenarios and
//! compare failure reports.
//!
//! Every command returns a process exit code: 0 for success, 1 when a run
//! ends in the failure terminal, 2 for usage and configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use semap_core::agents::http::{fetch_card, serve_agent, RemoteAgent, ServerHandle, DEFAULT_TIMEOUT};
use semap_core::agents::{Agent, AgentSet};
use semap_core::config::{self, LoadError};
use semap_core::orchestration::{run_workflow, Enforcement, RunError, RunOutcome};
use semap_core::scenario::{Scenario, ScenarioError};
use semap_core::trace::{classify, compare_reports, emit_csv, parse_csv, report, CategoryCounts, TerminalKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    InProcess,
    HttpLoopback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub workflow_path: PathBuf,
    pub scenario_path: PathBuf,
    pub enforcement: Option<Enforcement>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub transport: Transport,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Workflow(#[from] LoadError),
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Run(#[from] RunError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailureTotals {
    pub under_specification: u64,
    pub inter_agent_misalignment: u64,
    pub task_verification: u64,
    pub total: u64,
}

impl From<CategoryCounts> for FailureTotals {
    fn from(c: CategoryCounts) -> Self {
        Self {
            under_specification: c.under_specification,
            inter_agent_misalignment: c.inter_agent_misalignment,
            task_verification: c.task_verification,
            total: c.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub workflow_id: String,
    pub scenario: String,
    pub seed: u64,
    pub enforcement: String,
    pub final_state: String,
    pub rounds_used: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict_correct: Option<bool>,
    pub failures: FailureTotals,
}

/// Everything a run writes to its output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub trace_jsonl: String,
    pub failures_csv: String,
    pub summary: Summary,
    pub summary_json: String,
}

impl RunArtifacts {
    pub fn exit_code(&self) -> i32 {
        match self.outcome.terminal {
            TerminalKind::Success => EXIT_OK,
            TerminalKind::Failure => EXIT_FAILED,
        }
    }
}

/// Serves each agent on an ephemeral loopback port and returns remote
/// proxies built from the cards the servers publish.
fn loopback(agents: AgentSet) -> Result<(AgentSet, Vec<ServerHandle>), CliError> {
    let mut remote = AgentSet::new();
    let mut handles = Vec::new();
    for (id, agent) in agents {
        let handle = serve_agent(agent, "127.0.0.1:0").map_err(|e| CliError::Io(e.to_string()))?;
        let base = handle.base_url();
        let card = fetch_card(&base, DEFAULT_TIMEOUT).map_err(|e| CliError::Io(e.to_string()))?;
        tracing::debug!(agent = %id, url = %base, "serving agent over loopback");
        remote.insert(
            id,
            Arc::new(RemoteAgent::new(card, base, DEFAULT_TIMEOUT)) as Arc<dyn Agent>,
        );
        handles.push(handle);
    }
    Ok((remote, handles))
}

/// Loads, runs and analyses a scenario without touching the filesystem
/// beyond reading the inputs.
pub fn execute(opts: &RunOptions) -> Result<RunArtifacts, CliError> {
    let mut def = config::load(&opts.workflow_path)?;
    if let Some(e) = opts.enforcement {
        def.enforcement = e;
    }
    let scenario = Scenario::load(&opts.scenario_path)?;
    let agents = scenario.build_agents(&def)?;
    let (agents, handles) = match opts.transport {
        Transport::InProcess => (agents, Vec::new()),
        Transport::HttpLoopback => loopback(agents)?,
    };
    let outcome = run_workflow(&def, &agents, &scenario.run_config(opts.seed))?;
    drop(handles);

    let records = classify(&outcome.trace).expect("engine traces satisfy the trace invariants");
    let failure_report = report(&records, def.max_rounds);
    let summary = Summary {
        workflow_id: outcome.trace.workflow_id.clone(),
        scenario: scenario.name.clone(),
        seed: opts.seed,
        enforcement: def.enforcement.to_string(),
        final_state: outcome.final_state.clone(),
        rounds_used: outcome.rounds_used,
        verdict: outcome.verdict.clone(),
        verdict_correct: outcome.verdict_correct,
        failures: failure_report.per_category_totals.into(),
    };
    let mut summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    Ok(RunArtifacts {
        trace_jsonl: outcome.trace.to_jsonl(),
        failures_csv: emit_csv(&failure_report),
        outcome,
        summary,
        summary_json,
    })
}

fn write_outputs(dir: &Path, run: &RunArtifacts) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(TRACE_FILE), &run.trace_jsonl).map_err(io)?;
    fs::write(dir.join(FAILURES_FILE), &run.failures_csv).map_err(io)?;
    fs::write(dir.join(SUMMARY_FILE), &run.summary_json).map_err(io)?;
    Ok(())
}

pub fn cmd_validate(workflow_path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match config::load(workflow_path) {
        Ok(_) => {
            let _ = writeln!(out, "OK");
            EXIT_OK
        }
        Err(e) => {
            for issue in &e.issues {
                let _ = writeln!(err, "{issue}");
            }
            EXIT_USAGE
        }
    }
}

pub fn cmd_run(opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = execute(opts).and_then(|run| write_outputs(&opts.out_dir, &run).map(|_| run));
    match result {
        Ok(run) => {
            let _ = writeln!(
                out,
                "{}: {} after {} round(s), {} failure(s)",
                run.summary.scenario, run.summary.final_state, run.summary.rounds_used, run.summary.failures.total
            );
            run.exit_code()
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_USAGE
        }
    }
}

pub const REPORT_HEADER: &str = "category,permissive,strict,delta_pct";

/// The comparison table printed by `report`.
pub fn comparison_table(strict_dir: &Path, permissive_dir: &Path) -> Result<String, CliError> {
    let read = |dir: &Path| {
        let path = dir.join(FAILURES_FILE);
        let text =
            fs::read_to_string(&path).map_err(|e| CliError::Report(format!("cannot read {}: {e}", path.display())))?;
        parse_csv(&text).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
    };
    let strict = read(strict_dir)?;
    let permissive = read(permissive_dir)?;
    if strict.rounds() != permissive.rounds() {
        return Err(CliError::Report(format!(
            "reports cover different rounds ({} strict, {} permissive)",
            strict.rounds(),
            permissive.rounds()
        )));
    }
    let mut table = format!("{REPORT_HEADER}\n");
    for row in compare_reports(&strict, &permissive) {
        table.push_str(&format!(
            "{},{},{},{}\n",
            row.label, row.permissive, row.strict, row.delta
        ));
    }
    Ok(table)
}

pub fn cmd_report(strict_dir: &Path, permissive_dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match comparison_table(strict_dir, permissive_dir) {
        Ok(table) => {
            let _ = out.write_all(table.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_USAGE
        }
    }
}
