//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{pod_rows, structural, system, system_in, verb_conformance, POD_QUERY};
use kubesteer_core::codegen::{evaluate_test_results, FailureReason, BEGIN_MARKER, END_MARKER};
use kubesteer_core::config::Settings;
use kubesteer_core::engine::{
    AgentOutput, InterruptContext, InterruptKind, InterruptRequest, OutcomeKind, WorkflowState, WorkflowStatus,
};
use kubesteer_core::gateway::QueryStatus;
use kubesteer_core::governance::{AuditAction, AuditLog, AuditOptions, AuditRecord};
use kubesteer_core::kube::VerbCategory;
use kubesteer_core::llm::{MockEntry, MockScenario};
use kubesteer_core::memory::{
    canonical_json, restore_state, CheckpointCause, CheckpointStore, FileCheckpointStore, MemoryError,
};
use kubesteer_core::registry::{AgentName, DispatchContext, ToolFilter, ToolMetadata, ToolOrigin, ToolResult, ToolStore};
use kubesteer_core::sandbox::{Sandbox, SandboxPolicy, SandboxResult, Violation};
use kubesteer_core::scenario;
use kubesteer_core::system::System;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

// --- 1 ----------------------------------------------------------------------

fn pod_health_replay() -> Outcome {
    let sys = system("pod-health");
    let sc = scenario::load("pod-health").map_err(err)?;
    let started = Instant::now();
    let out = sys.replay(&sc, "c1").map_err(err)?;
    let elapsed = started.elapsed();
    ensure(out.kind == OutcomeKind::Response, || format!("outcome {:?}: {}", out.kind, out.content))?;

    let model = common::demo_model();
    let want_pods: BTreeSet<String> = pod_rows(&model).into_iter().map(|(ns, n, _, _)| format!("{ns}/{n}")).collect();
    let want_flagged: BTreeSet<String> = model
        .pods
        .iter()
        .filter(|(_, p)| p.phase.as_str() == "CrashLoopBackOff")
        .map(|(k, _)| format!("{}/{}", k.namespace, k.name))
        .collect();
    let rows: Vec<&str> = out.content.lines().filter(|l| l.starts_with("- ")).collect();
    let listed: BTreeSet<String> = rows
        .iter()
        .filter_map(|l| l[2..].split_whitespace().next().map(str::to_string))
        .collect();
    let flagged: BTreeSet<String> = rows
        .iter()
        .filter(|l| l.ends_with("[ERROR]"))
        .filter_map(|l| l[2..].split_whitespace().next().map(str::to_string))
        .collect();
    ensure(rows.len() == 6 && listed == want_pods, || format!("listed {listed:?}, want {want_pods:?}"))?;
    ensure(flagged == want_flagged, || format!("flagged {flagged:?}, want {want_flagged:?}"))?;
    let summary = format!("Pods with errors: {}", want_flagged.iter().cloned().collect::<Vec<_>>().join(", "));
    ensure(out.content.contains(&summary), || format!("missing {summary:?}"))?;

    let actors: Vec<&str> = out.state.transcript.iter().map(|e| e.actor.as_str()).collect();
    let configs = actors.iter().position(|a| *a == "agent:Configs");
    let logs = actors.iter().position(|a| *a == "agent:Logs");
    ensure(matches!((configs, logs), (Some(c), Some(l)) if c < l), || format!("agent order {actors:?}"))?;
    ensure(elapsed < Duration::from_secs(2), || format!("took {elapsed:?}"))?;
    Ok(format!("6 pods listed, 1 flagged, Configs before Logs, {} ms", elapsed.as_millis()))
}

// --- 2 ----------------------------------------------------------------------

fn codegen_record(state: &WorkflowState) -> Result<&AgentOutput, String> {
    state
        .agent_outputs
        .get(&AgentName::CodeGenerator)
        .and_then(|v| v.iter().find(|o| o.tool == "codegen"))
        .ok_or_else(|| "no codegen record".to_string())
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(root)
        .map(|it| it.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default()
}

fn ladder_step(name: &str, want_outcome: &str, want_attempts: u64) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let sys = system_in(name, dir.path());
    let sc = scenario::load(name).map_err(err)?;
    let out = sys.replay(&sc, "c2").map_err(err)?;
    let rec = codegen_record(&out.state)?;
    let outcome = rec.result.data["outcome"].as_str().unwrap_or_default();
    let attempts = rec.result.data["attempts_used"].as_u64().unwrap_or(0);
    ensure(outcome == want_outcome && attempts == want_attempts, || {
        format!("{name}: {outcome} after {attempts}, want {want_outcome} after {want_attempts}")
    })?;
    let generated = sys.engine.registry().list_tools(&ToolFilter {
        agent: None,
        origin: Some(ToolOrigin::Generated),
    });
    let index = ToolStore::open(dir.path().join("tools")).and_then(|s| s.index()).map_err(err)?;
    let runs = run_dirs(&dir.path().join("codegen"));
    ensure(runs.len() == 1, || format!("{name}: {} artifact runs", runs.len()))?;
    if want_outcome == "registered" {
        ensure(generated.len() == 1 && index.len() == 1, || format!("{name}: {} registry entries", generated.len()))?;
    } else {
        ensure(generated.is_empty() && index.is_empty(), || {
            format!("{name}: aborted run left {} registry entries", generated.len())
        })?;
        for attempt in 1..=want_attempts {
            let f = runs[0].join(format!("attempt-{attempt}")).join("failure.json");
            ensure(f.is_file(), || format!("{name}: missing {}", f.display()))?;
            let source = runs[0].join(format!("attempt-{attempt}")).join("tool.py");
            ensure(source.is_file(), || format!("{name}: missing {}", source.display()))?;
        }
    }
    Ok(format!("{name}={want_outcome}({attempts})"))
}

fn codegen_ladder() -> Outcome {
    let parts = [
        ladder_step("codegen-good", "registered", 1)?,
        ladder_step("codegen-retry", "registered", 3)?,
        ladder_step("codegen-exhausted", "aborted", 3)?,
    ];
    Ok(format!("{}; aborted run: 0 entries, artifacts kept", parts.join(", ")))
}

// --- 3 ----------------------------------------------------------------------

fn compare_runs(reference: &WorkflowState, other: &WorkflowState, label: &str) -> Result<(), String> {
    ensure(reference.transcript == other.transcript, || format!("{label}: transcripts differ"))?;
    ensure(reference.agent_outputs == other.agent_outputs, || format!("{label}: agent outputs differ"))?;
    ensure(structural(reference) == structural(other), || format!("{label}: states differ"))
}

fn resume_equivalence() -> Outcome {
    let sc = scenario::load("codegen-approval").map_err(err)?;
    let reference = system("codegen-approval").replay(&sc, "straight").map_err(err)?;
    ensure(reference.kind == OutcomeKind::Response, || format!("reference run: {:?}", reference.kind))?;

    let sys = system("codegen-approval");
    let paused = sys.engine.run_turn("paused", &sc.query, &sc.role).map_err(err)?;
    ensure(paused.kind == OutcomeKind::Interrupt, || "no interrupt raised".into())?;
    ensure(
        paused.state.pending_interrupt.as_ref().map(|i| i.kind) == Some(InterruptKind::Approval),
        || "interrupt is not an approval".into(),
    )?;
    let resumed = sys.engine.resume("paused", "yes").map_err(err)?;
    compare_runs(&reference.state, &resumed.state, "in-process")?;

    let dir = tempfile::tempdir().map_err(err)?;
    {
        let first = system_in("codegen-approval", dir.path());
        let out = first.engine.run_turn("restart", &sc.query, &sc.role).map_err(err)?;
        ensure(out.kind == OutcomeKind::Interrupt, || "no interrupt before restart".into())?;
    }
    let second = system_in("codegen-approval", dir.path());
    let after = second.engine.resume("restart", "yes").map_err(err)?;
    compare_runs(&reference.state, &after.state, "restart")?;
    Ok(format!(
        "{} transcript entries, {} steps identical (in-process and across restart)",
        reference.state.transcript.len(),
        reference.state.step_counter
    ))
}

// --- 4 ----------------------------------------------------------------------

fn sample_states() -> Vec<WorkflowState> {
    let mut out = Vec::new();
    for status in [WorkflowStatus::Running, WorkflowStatus::Completed, WorkflowStatus::Failed] {
        let mut s = WorkflowState::new("rt", "admin");
        s.status = status;
        s.step_counter = 3;
        s.push("user", "list pods");
        s.agent_outputs.entry(AgentName::Configs).or_default().push(AgentOutput {
            tool: "list_pods".into(),
            args: Map::new(),
            result: ToolResult::success(json!([{"name": "api-0"}]), 2),
        });
        if status == WorkflowStatus::Failed {
            s.failure = Some("loop cap".into());
        }
        out.push(s);
    }
    let contexts = [
        InterruptContext::Query,
        InterruptContext::Supervisor,
        InterruptContext::Codegen {
            task: "list failed jobs".into(),
            owner: Some(AgentName::Configs),
        },
    ];
    for kind in [InterruptKind::Clarification, InterruptKind::Approval] {
        for ctx in &contexts {
            let mut s = WorkflowState::new("rt", "operator");
            s.step_counter = 2;
            s.status = WorkflowStatus::AwaitingHuman;
            s.pending_interrupt = Some(InterruptRequest {
                kind,
                prompt: "Which namespace?".into(),
                originating_step: 2,
                context: ctx.clone(),
            });
            s.per_task_retries.insert("t1".into(), 2);
            out.push(s);
        }
    }
    out
}

fn checkpoint_store() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("checkpoints.log");
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut reference: HashMap<String, Vec<(u64, String, String)>> = HashMap::new();
    let started = Instant::now();
    let (mut saves, mut loads, mut lists) = (0, 0, 0);
    {
        let store = FileCheckpointStore::open(&path).map_err(err)?;
        for i in 0..1000 {
            let session = format!("session-{}", rng.random_range(0..10));
            match rng.random_range(0..10) {
                0..=4 => {
                    saves += 1;
                    let latest = reference.get(&session).and_then(|v| v.last()).map_or(0, |e| e.0);
                    let stale = reference.contains_key(&session) && rng.random_bool(0.1);
                    let seq = if stale { latest } else { latest + rng.random_range(1..3) };
                    let blob = format!("{{\"op\":{i}}}");
                    let r = store.save(&session, seq, "node", CheckpointCause::NodeBoundary, blob.clone());
                    if stale {
                        ensure(matches!(r, Err(MemoryError::SequenceConflict { .. })), || {
                            format!("op {i}: stale seq accepted")
                        })?;
                    } else {
                        let id = r.map_err(err)?;
                        reference.entry(session).or_default().push((seq, blob, id));
                    }
                }
                5..=7 => {
                    loads += 1;
                    let got = store.load_latest(&session);
                    match reference.get(&session).and_then(|v| v.last()) {
                        Some((seq, blob, id)) => {
                            let cp = got.map_err(err)?;
                            ensure(cp.seq == *seq && &cp.state_blob == blob && &cp.checkpoint_id == id, || {
                                format!("op {i}: load mismatch")
                            })?;
                        }
                        None => ensure(got == Err(MemoryError::NotFound(session.clone())), || {
                            format!("op {i}: phantom checkpoint")
                        })?,
                    }
                }
                _ => {
                    lists += 1;
                    let got: Vec<(u64, String, String)> = store
                        .list(&session)
                        .map_err(err)?
                        .into_iter()
                        .map(|c| (c.seq, c.state_blob, c.checkpoint_id))
                        .collect();
                    let want = reference.get(&session).cloned().unwrap_or_default();
                    ensure(got == want, || format!("op {i}: list mismatch"))?;
                }
            }
        }
    }
    let reopened = FileCheckpointStore::open(&path).map_err(err)?;
    for (session, want) in &reference {
        let got: Vec<(u64, String, String)> = reopened
            .list(session)
            .map_err(err)?
            .into_iter()
            .map(|c| (c.seq, c.state_blob, c.checkpoint_id))
            .collect();
        ensure(&got == want, || format!("{session}: differs after reopen"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("1000 operations took {elapsed:?}"))?;

    let states = sample_states();
    for (i, state) in states.iter().enumerate() {
        let blob = canonical_json(state).map_err(err)?;
        reopened
            .save("roundtrip", i as u64 + 1, "node", CheckpointCause::Interrupt, blob)
            .map_err(err)?;
        let back: WorkflowState = restore_state(&reopened.load_latest("roundtrip").map_err(err)?).map_err(err)?;
        ensure(&back == state, || format!("roundtrip {i} differs"))?;
    }
    Ok(format!(
        "{saves} saves/{loads} loads/{lists} lists over 10 sessions in {} ms; {} states roundtrip",
        elapsed.as_millis(),
        states.len()
    ))
}

// --- 5 ----------------------------------------------------------------------

fn script(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scripts").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = std::fs::read(&p) {
                out.insert(p, bytes);
            }
        }
    }
    out
}

fn sandbox_containment() -> Outcome {
    let sandbox = Sandbox::new("python3 -I -B", SandboxPolicy::default()).map_err(err)?;
    ensure(sandbox.available(), || "python interpreter unavailable".into())?;

    let policy = SandboxPolicy {
        wall_timeout_ms: 1000,
        ..SandboxPolicy::default()
    };
    let started = Instant::now();
    let r = sandbox
        .execute_with(&script("sleep_forever.py")?, &Value::Null, &policy)
        .map_err(err)?;
    let wall = started.elapsed().as_millis() as u64;
    let timed_out_at = r.duration_ms;
    ensure(r.violations == vec![Violation::Timeout] && !r.exit_ok, || format!("timeout run: {r:?}"))?;
    ensure(r.duration_ms.abs_diff(1000) <= 500 && wall <= 1500, || {
        format!("terminated after {} ms (wall {wall} ms)", r.duration_ms)
    })?;

    let outside = tempfile::tempdir().map_err(err)?;
    std::fs::create_dir_all(outside.path().join("nested")).map_err(err)?;
    std::fs::write(outside.path().join("keep.txt"), "original").map_err(err)?;
    std::fs::write(outside.path().join("nested/data.bin"), [0u8, 1, 2, 3]).map_err(err)?;
    let before = tree(outside.path());
    let target = outside.path().join("keep.txt");
    let r = sandbox
        .execute(&script("escape_write.py")?, &json!(target.to_string_lossy()))
        .map_err(err)?;
    ensure(r.violations.contains(&Violation::FsEscape), || format!("escape not reported: {r:?}"))?;
    ensure(tree(outside.path()) == before, || "outside tree changed".into())?;

    let r = sandbox.execute(&script("flood.py")?, &Value::Null).map_err(err)?;
    let cap = SandboxPolicy::default().max_output_bytes;
    ensure(r.stdout.len() == cap && r.violations.contains(&Violation::OutputCap), || {
        format!("flood: {} bytes, violations {:?}", r.stdout.len(), r.violations)
    })?;
    Ok(format!("timeout at {timed_out_at} ms, fs_escape reported with tree unchanged, 2 MiB cut to {cap} bytes"))
}

// --- 6 ----------------------------------------------------------------------

fn evaluate_gate() -> Outcome {
    let marked = format!("import json\n{BEGIN_MARKER}\ndef run(args):\n    return args\n{END_MARKER}\n");
    let unmarked = "import json\ndef run(args):\n    return args\n".to_string();
    let denied = format!("import subprocess\n{marked}");
    let good = r#"{"status": "success", "data": {"jobs": []}}"#;
    let result = |stdout: &str| SandboxResult {
        exit_ok: true,
        exit_code: Some(0),
        stdout: stdout.to_string(),
        stderr: String::new(),
        duration_ms: 12,
        violations: Vec::new(),
    };
    let policy = SandboxPolicy::default();
    let cases: [(&str, &String, &str, Vec<FailureReason>); 5] = [
        ("conformant", &marked, good, vec![]),
        ("non-document", &marked, "jobs: none", vec![FailureReason::NotParseableOutput]),
        ("missing data", &marked, r#"{"status": "success"}"#, vec![FailureReason::SchemaMismatch]),
        ("missing markers", &unmarked, good, vec![FailureReason::MissingMarkers]),
        ("denylisted token", &denied, good, vec![FailureReason::PolicyViolation]),
    ];
    for (label, source, stdout, want) in cases {
        let v = evaluate_test_results(source, &result(stdout), &policy);
        ensure(v.failure_reasons == want && v.passed == want.is_empty(), || {
            format!("{label}: got {:?}, want {want:?}", v.failure_reasons)
        })?;
    }
    Ok("5 cases: pass, not_parseable_output, schema_mismatch, missing_markers, policy_violation".into())
}

// --- 7 ----------------------------------------------------------------------

fn verb_surface() -> Outcome {
    let results = verb_conformance();
    let mut covered = Vec::new();
    for (category, r) in results {
        r.map_err(|e| format!("{category}: {e}"))?;
        covered.push(category);
    }
    ensure(covered == VerbCategory::ALL.to_vec(), || format!("covered {covered:?}"))?;
    Ok("7/7 categories equal the model oracle".into())
}

// --- 8 ----------------------------------------------------------------------

fn rbac_matrix() -> Outcome {
    use VerbCategory::*;
    // Expected grants, written out independently of the role table code.
    let table: BTreeMap<&str, &[VerbCategory]> = [
        ("viewer", &[Read][..]),
        ("operator", &[Read, WriteModify, ScaleLifecycle, ExecuteProxy][..]),
        ("admin", &VerbCategory::ALL[..]),
    ]
    .into();
    let mut cases: Vec<(&str, VerbCategory, String)> = Vec::new();
    for role in ["viewer", "operator"] {
        for c in VerbCategory::ALL {
            cases.push((role, c, format!("{role} asks for a {c} operation on pods")));
        }
    }
    for c in VerbCategory::ALL.into_iter().filter(|c| *c != Read) {
        cases.push(("admin", c, format!("admin asks for a {c} operation on pods")));
    }
    // The read-only user asking to create a secret.
    let secret = cases
        .iter_mut()
        .find(|(r, c, _)| *r == "viewer" && *c == WriteModify)
        .ok_or("matrix lacks viewer/WriteModify")?;
    secret.2 = "create a secret named token in namespace demo".into();

    let entries: Vec<MockEntry> = cases
        .iter()
        .enumerate()
        .map(|(i, (_, c, text))| {
            MockEntry::new(
                format!("Request: case {i}: {text}"),
                format!("<directive>\nstatus: accepted\nintent: {c}\nnamespaces: demo\n</directive>"),
            )
        })
        .collect();
    let sys = System::build_with_mock(Settings::default(), MockScenario::new(entries, false).map_err(err)?)
        .map_err(err)?;
    let gateway = sys.engine.query_gateway();
    for (i, (role, c, text)) in cases.iter().enumerate() {
        let q = gateway
            .validate_query(sys.engine.llm(), &format!("case {i}: {text}"), role, None)
            .map_err(err)?;
        let want = table[role].contains(c);
        let got = q.status == QueryStatus::Accepted;
        ensure(got == want, || format!("({role}, {c}): accepted={got}, table says {want}"))?;
        if !want {
            ensure(q.status == QueryStatus::Rejected && q.rejection_reason.is_some(), || {
                format!("({role}, {c}) lacks a rejection reason")
            })?;
        }
    }

    let secret_sys = System::build_with_mock(
        Settings::default(),
        MockScenario::new(
            vec![MockEntry::new(
                "[purpose:validate]",
                "<directive>\nstatus: accepted\nintent: Write/Modify\nkinds: secret\nnamespaces: demo\n</directive>",
            )],
            false,
        )
        .map_err(err)?,
    )
    .map_err(err)?;
    let out = secret_sys
        .engine
        .run_turn("rbac", "create a secret named token in namespace demo", "viewer")
        .map_err(err)?;
    ensure(out.kind == OutcomeKind::Rejection && out.content.contains("permission"), || {
        format!("viewer secret creation: {:?} {}", out.kind, out.content)
    })?;
    Ok(format!("{} cases match the role table, viewer cannot create secrets", cases.len()))
}

// --- 9 ----------------------------------------------------------------------

fn dispatch_generated(sys: &System) -> Result<ToolResult, String> {
    let e = &sys.engine;
    let tool = e.registry().tool("list_failed_jobs").ok_or("tool not registered")?;
    let mut args = Map::new();
    args.insert("namespace".into(), json!("default"));
    let ctx = DispatchContext {
        cluster: e.cluster(),
        sandbox: e.sandbox(),
        audit: e.audit(),
        roles: e.query_gateway().roles(),
        role: "admin",
        session_id: None,
        step: 1,
    };
    e.registry().dispatch(&tool, &args, &ctx).map_err(err)
}

fn registry_durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let before = {
        let sys = system_in("codegen-good", dir.path());
        let sc = scenario::load("codegen-good").map_err(err)?;
        sys.replay(&sc, "c9").map_err(err)?;
        let registry = sys.engine.registry();
        let spec = registry.tool("list_failed_jobs").ok_or("not registered")?;
        let manifest = registry.manifest("list_failed_jobs").ok_or("no manifest")?;
        let source = registry.script("list_failed_jobs").ok_or("no script")?;
        let metadata = ToolMetadata {
            function_name: manifest.name.clone(),
            input_schema: manifest.schema.clone(),
            tool_variable_name: manifest.tool_variable_name.clone(),
            description: manifest.description.clone(),
        };
        let again = registry
            .register_generated(&metadata, &source, Some(manifest.owner_agent), manifest.category, None, None)
            .map_err(err)?;
        ensure(again == spec, || "second registration changed the tool".into())?;
        let generated = registry.list_tools(&ToolFilter {
            agent: None,
            origin: Some(ToolOrigin::Generated),
        });
        ensure(generated.len() == 1, || format!("{} entries after double registration", generated.len()))?;
        let r = dispatch_generated(&sys)?;
        ensure(r.is_success(), || format!("dispatch failed: {:?}", r.error_message))?;
        r
    };
    let index = ToolStore::open(dir.path().join("tools")).and_then(|s| s.index()).map_err(err)?;
    ensure(index.len() == 1, || format!("{} persisted entries", index.len()))?;

    let restarted = system_in("codegen-good", dir.path());
    let after = dispatch_generated(&restarted)?;
    ensure(after == before, || format!("output changed across restart: {} vs {}", before.data, after.data))?;
    ensure(before.data.to_string().contains("nightly-report"), || format!("unexpected output {}", before.data))?;
    Ok("one entry after double registration; identical output after restart".into())
}

// --- 10 ---------------------------------------------------------------------

fn audit_completeness() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let path;
    let first_read: Vec<AuditRecord>;
    {
        let sys = system_in("pod-health", dir.path());
        let out = sys.engine.run_turn("c10", POD_QUERY, "admin").map_err(err)?;
        ensure(out.kind == OutcomeKind::Response, || format!("run ended {:?}", out.kind))?;
        path = sys.engine.audit().path().ok_or("audit log is not file-backed")?.to_path_buf();
        first_read = sys.engine.audit().all();
    }
    let session: Vec<&AuditRecord> = first_read.iter().filter(|r| r.session_id.as_deref() == Some("c10")).collect();
    let count = |a: AuditAction| session.iter().filter(|r| r.action == a).count();
    let (q, routes, dispatched, results) = (
        count(AuditAction::QueryReceived),
        count(AuditAction::RoutingDecision),
        count(AuditAction::ToolDispatched),
        count(AuditAction::ToolResult),
    );
    ensure(q >= 1 && routes >= 2 && dispatched >= 2 && results >= 1, || {
        format!("query_received={q} routing_decision={routes} tool_dispatched={dispatched} tool_result={results}")
    })?;
    let last_dispatch = session.iter().rposition(|r| r.action == AuditAction::ToolDispatched);
    let last_result = session.iter().rposition(|r| r.action == AuditAction::ToolResult);
    ensure(matches!((last_dispatch, last_result), (Some(d), Some(r)) if r > d), || {
        "no tool_result after the final dispatch".into()
    })?;
    let ids: BTreeSet<&str> = first_read.iter().map(|r| r.record_id.as_str()).collect();
    ensure(ids.len() == first_read.len(), || "duplicate record ids".into())?;

    let bytes = std::fs::read(&path).map_err(err)?;
    let reread = AuditLog::open(&path, AuditOptions::default()).map_err(err)?.all();
    let reread_again = AuditLog::open(&path, AuditOptions::default()).map_err(err)?.all();
    let encode = |rs: &[AuditRecord]| rs.iter().map(|r| canonical_json(r).unwrap_or_default()).collect::<Vec<_>>();
    ensure(encode(&reread) == encode(&first_read), || "re-read records differ from the originals".into())?;
    ensure(reread == reread_again, || "consecutive re-reads differ".into())?;
    ensure(std::fs::read(&path).map_err(err)? == bytes, || "log bytes changed on re-read".into())?;
    Ok(format!(
        "query_received={q} routing_decision={routes} tool_dispatched={dispatched} tool_result={results}; {} records byte-stable",
        first_read.len()
    ))
}

// --- 11 ---------------------------------------------------------------------

fn route_latency() -> Outcome {
    let sys = system("pod-health");
    let mut base = WorkflowState::new("bench", "admin");
    base.push("user", POD_QUERY);
    let mut samples = Vec::with_capacity(100);
    for _ in 0..100 {
        sys.engine.llm().clear_cache();
        let mut state = base.clone();
        let started = Instant::now();
        let d = sys.engine.supervisor_route(&mut state).map_err(err)?;
        samples.push(started.elapsed());
        ensure(d.target_agent == Some(AgentName::Configs), || format!("unexpected decision {d:?}"))?;
    }
    samples.sort();
    let median = (samples[49] + samples[50]) / 2;
    ensure(median < Duration::from_millis(50), || format!("median {median:?}"))?;
    Ok(format!("median {:.3} ms over 100 uncached calls", median.as_secs_f64() * 1000.0))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("pod health replay", pod_health_replay),
        ("codegen retry ladder", codegen_ladder),
        ("resume equivalence", resume_equivalence),
        ("checkpoint store", checkpoint_store),
        ("sandbox containment", sandbox_containment),
        ("evaluate-stage schema gate", evaluate_gate),
        ("verb-surface conformance", verb_surface),
        ("rbac gate", rbac_matrix),
        ("registry idempotency and durability", registry_durability),
        ("audit completeness", audit_completeness),
        ("mock-path routing latency", route_latency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
