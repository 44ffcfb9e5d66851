//! One line per acceptance criterion. Exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use semap_cli::{execute, RunOptions, Transport};
use semap_core::agents::FaultKind;
use semap_core::config;
use semap_core::contracts::{
    check_postconditions, check_preconditions, Artifact, ArtifactKind, BehavioralContract, Conditions,
    ContractRegistry, InputSpec,
};
use semap_core::lifecycle::{reachable_states, validate_spec, LifecycleInstance, LifecycleSpec, SpecError, Transition};
use semap_core::messaging::{decode, encode, TypedMessage};
use semap_core::orchestration::{aggregate_votes, run_workflow, Enforcement, Label, Verdict, VoteError};
use semap_core::scenario::Scenario;
use semap_core::trace::{classify, Category, DeltaPercent, Event};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed < limit {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn kind(i: usize) -> String {
    format!("kind_{i}")
}

fn contract_oracle() -> Outcome {
    let started = Instant::now();
    let case = (1..=8usize).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((any::<bool>(), any::<bool>()), n),
            proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n),
            proptest::collection::vec(0..n, 0..=2 * n),
        )
    });
    runner(1000)
        .run(&case, |(n, input_flags, outputs, available)| {
            let mut registry = ContractRegistry::new();
            for i in 0..n {
                registry.register_kind(ArtifactKind::text(kind(i))).unwrap();
            }
            let inputs: Vec<InputSpec> = (0..n)
                .filter(|i| input_flags[*i].0)
                .map(|i| {
                    if input_flags[i].1 {
                        InputSpec::optional(kind(i))
                    } else {
                        InputSpec::required(kind(i))
                    }
                })
                .collect();
            let contract = BehavioralContract::new("Role", inputs, outputs.iter().map(|&k| kind(k)).collect());
            let artifacts: Vec<Artifact> = available.iter().map(|&k| Artifact::text(kind(k), "x")).collect();

            let present: BTreeSet<String> = available.iter().map(|&k| kind(k)).collect();
            let required: BTreeSet<String> = (0..n)
                .filter(|i| input_flags[*i].0 && !input_flags[*i].1)
                .map(kind)
                .collect();
            let promised: BTreeSet<String> = outputs.iter().map(|&k| kind(k)).collect();
            let pre_missing: Vec<String> = required.difference(&present).cloned().collect();
            let post_missing: Vec<String> = promised.difference(&present).cloned().collect();
            let pre = if pre_missing.is_empty() {
                Conditions::Satisfied { extra: vec![] }
            } else {
                Conditions::Missing(pre_missing)
            };
            let post = if post_missing.is_empty() {
                Conditions::Satisfied {
                    extra: present.difference(&promised).cloned().collect(),
                }
            } else {
                Conditions::Missing(post_missing)
            };
            prop_assert_eq!(check_preconditions(&registry, &contract, &artifacts).unwrap(), pre);
            prop_assert_eq!(check_postconditions(&registry, &contract, &artifacts).unwrap(), post);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(started.elapsed(), Duration::from_secs(5), "1000 cases".into())
}

#[derive(Debug, Clone)]
struct RawSpec {
    states: usize,
    outcomes: usize,
    terminal: Vec<bool>,
    table: Vec<Vec<Option<usize>>>,
}

fn raw_spec() -> impl Strategy<Value = RawSpec> {
    (2..=20usize, 1..=4usize).prop_flat_map(|(n, m)| {
        (
            proptest::collection::vec(prop::bool::weighted(0.25), n),
            proptest::collection::vec(proptest::collection::vec(proptest::option::weighted(0.7, 0..n), m), n),
        )
            .prop_map(move |(terminal, table)| RawSpec {
                states: n,
                outcomes: m,
                terminal,
                table,
            })
    })
}

fn st(i: usize) -> String {
    format!("s{i}")
}

fn oc(i: usize) -> String {
    format!("o{i}")
}

impl RawSpec {
    fn build(&self) -> LifecycleSpec {
        let transitions = self
            .table
            .iter()
            .enumerate()
            .flat_map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .filter_map(move |(o, t)| t.map(|t| Transition::new(&st(s), &oc(o), &st(t))))
            })
            .collect();
        LifecycleSpec {
            states: (0..self.states).map(st).collect(),
            outcomes: (0..self.outcomes).map(oc).collect(),
            initial: st(0),
            terminals: (0..self.states).filter(|i| self.terminal[*i]).map(st).collect(),
            transitions,
            exhaustion_terminal: None,
        }
    }

    fn repaired(&self) -> LifecycleSpec {
        let mut r = self.clone();
        let last = r.states - 1;
        r.terminal[last] = true;
        r.terminal[0] = false;
        for s in 0..r.states {
            if r.terminal[s] {
                r.table[s].iter_mut().for_each(|t| *t = None);
            } else if r.table[s].iter().all(Option::is_none) {
                r.table[s][0] = Some(last);
            }
        }
        let mut spec = r.build();
        spec.exhaustion_terminal = Some(st(last));
        if !spec.terminals.iter().any(|t| reachable_states(&spec).contains(t)) {
            spec.transitions.iter_mut().find(|t| t.from == st(0)).unwrap().to = st(last);
        }
        spec
    }
}

fn bfs(spec: &LifecycleSpec) -> BTreeSet<String> {
    let mut seen = BTreeSet::from([spec.initial.clone()]);
    let mut queue = std::collections::VecDeque::from([spec.initial.clone()]);
    while let Some(s) = queue.pop_front() {
        for t in spec.transitions.iter().filter(|t| t.from == s) {
            if seen.insert(t.to.clone()) {
                queue.push_back(t.to.clone());
            }
        }
    }
    seen
}

fn fsm_oracle() -> Outcome {
    let started = Instant::now();
    let strategy = (raw_spec(), proptest::collection::vec(0..4usize, 0..60));
    runner(1000)
        .run(&strategy, |(raw, stream)| {
            let spec = raw.repaired();
            prop_assert!(validate_spec(&spec).is_empty());
            let table: BTreeMap<(String, String), String> = spec
                .transitions
                .iter()
                .map(|t| ((t.from.clone(), t.on.clone()), t.to.clone()))
                .collect();
            let mut inst = LifecycleInstance::new(Arc::new(spec.clone()), 1000).unwrap();
            let mut folded = spec.initial.clone();
            for o in stream.into_iter().map(|o| oc(o % raw.outcomes)) {
                if spec.terminals.contains(&folded) {
                    prop_assert!(inst.step(&o).is_err());
                } else if let Some(next) = table.get(&(folded.clone(), o.clone())) {
                    inst.step(&o).map_err(|e| TestCaseError::fail(e.to_string()))?;
                    folded = next.clone();
                } else {
                    prop_assert!(inst.step(&o).is_err());
                }
                prop_assert_eq!(inst.current(), folded.as_str());
            }
            let unrepaired = raw.build();
            let oracle = bfs(&unrepaired);
            prop_assert_eq!(reachable_states(&unrepaired), oracle.clone());
            let expect = !unrepaired.terminals.iter().any(|t| oracle.contains(t));
            prop_assert_eq!(
                validate_spec(&unrepaired).contains(&SpecError::UnreachableTerminal),
                expect
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(started.elapsed(), Duration::from_secs(10), "1000 specs".into())
}

fn wire_round_trip() -> Outcome {
    let golden =
        br#"{"jsonrpc":"2.0","method":"run","id":0,"params":{"sender":"ceo","receiver":"coder","round":1,"payload":[]}}"#;
    let msg = TypedMessage::new(0, "ceo", "coder", 1, vec![]);
    check(
        encode(&msg).map_err(|e| e.to_string())? == golden,
        "golden envelope bytes differ",
    )?;
    check(
        decode(golden).map_err(|e| e.to_string())? == msg,
        "golden envelope decodes differently",
    )?;
    let artifact = (
        any::<String>(),
        proptest::collection::btree_map(any::<String>(), any::<String>(), 0..4),
    )
        .prop_map(|(kind, fields)| Artifact { kind, fields });
    let message = (
        any::<u64>(),
        "[a-z]{1,8}",
        "[A-Z]{1,8}",
        1..=u32::MAX,
        proptest::collection::vec(artifact, 0..5),
    )
        .prop_map(|(id, s, r, round, payload)| TypedMessage::new(id, s, r, round, payload));
    runner(1000)
        .run(&message, |m| {
            let bytes = encode(&m).unwrap();
            prop_assert_eq!(decode(&bytes).unwrap(), m);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 messages, golden envelope byte-exact".into())
}

fn load_scenario(name: &str) -> Result<Scenario, String> {
    Scenario::load(root().join("scenarios").join(format!("{name}.json"))).map_err(|e| e.to_string())
}

fn bounded_termination() -> Outcome {
    let started = Instant::now();
    let def = config::load(root().join("configs/dev_default.json")).map_err(|e| e.to_string())?;
    let s = load_scenario("dev_always_fail")?;
    let out = run_workflow(
        &def,
        &s.build_agents(&def).map_err(|e| e.to_string())?,
        &s.run_config(0),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let last = out.trace.events.last().ok_or("empty trace")?;
    let exhausted = matches!(&last.event, Event::Transition { outcome, .. } if outcome == "rounds_exhausted");
    check(out.final_state == "failed", format!("final state {}", out.final_state))?;
    check(out.rounds_used == 5, format!("rounds {}", out.rounds_used))?;
    check(exhausted, "last transition is not rounds_exhausted")?;
    within(
        elapsed,
        Duration::from_secs(1),
        "failed at round 5 via rounds_exhausted".into(),
    )
}

fn fault_separation() -> Outcome {
    let started = Instant::now();
    let cases = [
        ("omit_output", FaultKind::OmitOutput, Category::UnderSpecification),
        (
            "drop_required_field",
            FaultKind::DropRequiredField,
            Category::UnderSpecification,
        ),
        ("wrong_kind", FaultKind::WrongKind, Category::InterAgentMisalignment),
        ("extra_kind", FaultKind::ExtraKind, Category::InterAgentMisalignment),
        ("wrong_verdict", FaultKind::WrongVerdict, Category::TaskVerification),
    ];
    for (name, fault, category) in cases {
        let s = load_scenario(&format!("dev_fault_{name}"))?;
        let (faulty, script) = s.agents.iter().find(|(_, a)| !a.faults.is_empty()).ok_or("no faults")?;
        check(
            script.faults.iter().all(|f| f.fault == fault),
            format!("{name}: mixed fault kinds"),
        )?;
        let rounds: BTreeSet<u32> = script.faults.iter().map(|f| f.round).collect();
        check(rounds.len() == 3, format!("{name}: {} injections", rounds.len()))?;

        let mut def = config::dev_default();
        def.enforcement = Enforcement::Strict;
        let strict = run_workflow(
            &def,
            &s.build_agents(&def).map_err(|e| e.to_string())?,
            &s.run_config(0),
        )
        .map_err(|e| e.to_string())?;
        let mut blocked = BTreeSet::new();
        let mut quarantined: Vec<&Artifact> = Vec::new();
        for e in &strict.trace.events {
            match &e.event {
                Event::MessageBlocked { sender, payload, .. } if sender == faulty => {
                    blocked.insert(e.round);
                    quarantined.extend(payload);
                }
                Event::MessageSent { sender, payload, .. } => {
                    check(
                        !(sender == faulty && rounds.contains(&e.round)),
                        format!("{name}: faulty reply delivered"),
                    )?;
                    check(
                        !payload.iter().any(|a| quarantined.contains(&a)),
                        format!("{name}: blocked artifact observed downstream"),
                    )?;
                }
                _ => {}
            }
        }
        check(
            blocked == rounds,
            format!("{name}: strict blocked rounds {blocked:?}, injected {rounds:?}"),
        )?;

        def.enforcement = Enforcement::Permissive;
        let permissive = run_workflow(
            &def,
            &s.build_agents(&def).map_err(|e| e.to_string())?,
            &s.run_config(0),
        )
        .map_err(|e| e.to_string())?;
        let records = classify(&permissive.trace).map_err(|e| e.to_string())?;
        let in_category = records.iter().filter(|r| r.category == category).count();
        check(
            records.len() == 3 && in_category == 3,
            format!(
                "{name}: permissive produced {} records, {in_category} in {category}",
                records.len()
            ),
        )?;
    }
    within(
        started.elapsed(),
        Duration::from_secs(5),
        "5 fault kinds x 3 injections".into(),
    )
}

fn voting() -> Outcome {
    let panel = |mask: u32, n: u32| -> Vec<Verdict> {
        (0..n)
            .map(|i| {
                Verdict::new(
                    format!("v{i}"),
                    if mask >> i & 1 == 1 {
                        Label::Vulnerable
                    } else {
                        Label::Safe
                    },
                )
            })
            .collect()
    };
    let mut checked = 0;
    for n in [3u32, 5] {
        for mask in 0..1u32 << n {
            let expected = if mask.count_ones() * 2 > n {
                Label::Vulnerable
            } else {
                Label::Safe
            };
            check(
                aggregate_votes(&panel(mask, n)) == Ok(expected),
                format!("n={n} mask={mask:b}"),
            )?;
            checked += 1;
        }
    }
    for n in [2u32, 4] {
        check(
            aggregate_votes(&panel(0, n)) == Err(VoteError::EvenPanel(n as usize)),
            format!("even panel {n} accepted"),
        )?;
    }
    Ok(format!("{checked} combinations, even panels rejected"))
}

fn delta_arithmetic() -> Outcome {
    let printed = [
        ((256, 92), "64.1"),
        ((112, 34), "69.6"),
        ((103, 90), "12.6"),
        ((67, 29), "56.7"),
        ((78, 56), "28.2"),
        ((38, 20), "47.4"),
    ];
    for ((p, s), text) in printed {
        let got = DeltaPercent::between(p, s).to_string();
        check(got == text, format!("({p}, {s}) -> {got}, expected {text}"))?;
    }
    Ok("6 printed totals reproduced".into())
}

fn options(scenario: &str, transport: Transport, out: &Path) -> RunOptions {
    RunOptions {
        workflow_path: root().join("configs/dev_default.json"),
        scenario_path: root().join("scenarios").join(scenario),
        enforcement: None,
        seed: 0,
        out_dir: out.to_path_buf(),
        transport,
    }
}

fn transport_transparency() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let local = execute(&options("dev_demo.json", Transport::InProcess, dir.path())).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let remote = execute(&options("dev_demo.json", Transport::HttpLoopback, dir.path())).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(
        local.outcome.final_state == remote.outcome.final_state,
        "final states differ",
    )?;
    check(local.outcome.rounds_used == remote.outcome.rounds_used, "rounds differ")?;
    check(local.failures_csv == remote.failures_csv, "failure reports differ")?;
    within(elapsed, Duration::from_secs(10), format!("loopback run {elapsed:.2?}"))
}

fn semap(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_semap"))
        .args(args)
        .current_dir(root())
        .output()
        .map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        semap(&[
            "run",
            "--workflow",
            "configs/dev_default.json",
            "--scenario",
            "scenarios/dev_demo.json",
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ])?;
        let files: Vec<Vec<u8>> = ["trace.jsonl", "failures.csv", "summary.json"]
            .iter()
            .map(|f| fs::read(out.join(f)).map_err(|e| format!("{f}: {e}")))
            .collect::<Result<_, _>>()?;
        outputs.push(files);
    }
    check(outputs[0] == outputs[1], "outputs differ between runs")?;
    Ok("trace.jsonl, failures.csv, summary.json byte-identical".into())
}

fn cli_contract() -> Outcome {
    for path in ["configs/dev_default.json", "configs/vuln_default.json"] {
        check(
            semap(&["validate", path])?.status.code() == Some(0),
            format!("{path} does not validate"),
        )?;
    }
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/five_defects.json");
    let o = semap(&["validate", fixture.to_str().unwrap()])?;
    let lines = String::from_utf8_lossy(&o.stderr).lines().count();
    check(
        o.status.code() == Some(2) && lines == 5,
        format!("five-defect fixture: exit {:?}, {lines} lines", o.status.code()),
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    let mut entries: Vec<PathBuf> = fs::read_dir(root().join("scenarios"))
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let workflow = if name.starts_with("vuln") {
            "configs/vuln_default.json"
        } else {
            "configs/dev_default.json"
        };
        for mode in ["strict", "permissive"] {
            let out = dir.path().join(format!("{name}-{mode}"));
            let o = semap(&[
                "run",
                "--workflow",
                workflow,
                "--scenario",
                path.to_str().unwrap(),
                "--enforcement",
                mode,
                "--out",
                out.to_str().unwrap(),
            ])?;
            let summary: serde_json::Value =
                serde_json::from_slice(&fs::read(out.join("summary.json")).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
            let expected = if summary["final_state"] == "failed" { 1 } else { 0 };
            check(
                o.status.code() == Some(expected),
                format!("{name} {mode}: exit {:?}", o.status.code()),
            )?;
            runs += 1;
        }
    }
    let o = semap(&[
        "run",
        "--workflow",
        "configs/dev_default.json",
        "--scenario",
        "scenarios/vuln_majority.json",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ])?;
    check(o.status.code() == Some(2), "mismatched scenario does not exit 2")?;
    Ok(format!(
        "defaults OK, 5 defect lines, {runs} runs in {{0,1}}, config error exits 2"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("contract-oracle equivalence", contract_oracle),
        ("FSM-oracle equivalence", fsm_oracle),
        ("wire round-trip", wire_round_trip),
        ("bounded termination", bounded_termination),
        ("fault-injection separation", fault_separation),
        ("voting", voting),
        ("delta arithmetic", delta_arithmetic),
        ("transport transparency", transport_transparency),
        ("determinism", determinism),
        ("CLI contract", cli_contract),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = run();
        let elapsed = started.elapsed();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
