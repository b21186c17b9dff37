use kubesteer_core::config::Settings;
use kubesteer_core::engine::{
    flagged_pods, parse_decision, EngineError, InterruptKind, OutcomeKind, RouteAction, WorkflowState, WorkflowStatus,
};
use kubesteer_core::governance::{AuditAction, AuditFilter};
use kubesteer_core::llm::{MockEntry, MockScenario};
use kubesteer_core::registry::AgentName;
use kubesteer_core::scenario;
use kubesteer_core::system::System;

fn system(name: &str) -> System {
    System::for_scenario(&scenario::load(name).unwrap(), Settings::default()).unwrap()
}

fn mock_system(entries: Vec<MockEntry>, hitl: bool) -> System {
    let settings = Settings {
        hitl,
        ..Settings::default()
    };
    System::build_with_mock(settings, MockScenario::new(entries, false).unwrap()).unwrap()
}

fn accept() -> MockEntry {
    MockEntry::new(
        "[purpose:validate]",
        "<directive>\nstatus: accepted\nintent: Read\nnamespaces: ALL\n</directive>",
    )
}

fn route(markers: &[&str], body: &str) -> MockEntry {
    let mut m = vec!["[purpose:route]", "[supervisor]"];
    m.extend_from_slice(markers);
    MockEntry::all(&m, format!("<directive>\n{body}\n</directive>"))
}

fn agent_steps(state: &WorkflowState) -> Vec<&str> {
    state
        .transcript
        .iter()
        .filter(|e| e.actor.starts_with("agent:"))
        .map(|e| e.actor.as_str())
        .collect()
}

#[test]
fn pod_health_flags_crashing_pod_after_listing() {
    let sys = system("pod-health");
    let s = scenario::load("pod-health").unwrap();
    let out = sys.replay(&s, "s1").unwrap();
    assert_eq!(out.kind, OutcomeKind::Response, "{}", out.content);
    assert_eq!(out.state.status, WorkflowStatus::Completed);
    assert!(out.content.contains("Pods checked: 6"), "{}", out.content);
    assert_eq!(flagged_pods(&out.content), vec!["default/batch-worker".to_string()]);
    let steps = agent_steps(&out.state);
    let configs = steps.iter().position(|a| *a == "agent:Configs").unwrap();
    let logs = steps.iter().position(|a| *a == "agent:Logs").unwrap();
    assert!(configs < logs);
    assert_eq!(out.state.agent_outputs[&AgentName::Logs].len(), 6);

    let cps = sys.engine.checkpoints().list("s1").unwrap();
    let seqs: Vec<u64> = cps.iter().map(|c| c.seq).collect();
    assert_eq!(seqs, (1..=out.state.step_counter).collect::<Vec<_>>());
}

#[test]
fn greeting_is_rejected_without_agent_steps() {
    let sys = mock_system(vec![accept()], true);
    let out = sys.engine.run_turn("s", "hello", "viewer").unwrap();
    assert_eq!(out.kind, OutcomeKind::Rejection);
    assert_eq!(out.state.status, WorkflowStatus::Completed);
    assert!(agent_steps(&out.state).is_empty());
    assert_eq!(sys.engine.audit().count(&AuditFilter::action(AuditAction::QueryRejected)), 1);
}

#[test]
fn viewer_cannot_create_secrets() {
    let sys = mock_system(
        vec![MockEntry::new(
            "[purpose:validate]",
            "<directive>\nstatus: accepted\nintent: Write/Modify\nkinds: secret\nnamespaces: demo\n</directive>",
        )],
        true,
    );
    let out = sys.engine.run_turn("s", "create a secret named token in demo", "viewer").unwrap();
    assert_eq!(out.kind, OutcomeKind::Rejection);
    assert!(out.content.contains("permission"));
}

#[test]
fn missing_capability_waits_for_approval() {
    let sys = system("codegen-approval");
    let s = scenario::load("codegen-approval").unwrap();
    let out = sys.engine.run_turn("s", &s.query, &s.role).unwrap();
    assert_eq!(out.kind, OutcomeKind::Interrupt);
    assert_eq!(out.state.status, WorkflowStatus::AwaitingHuman);
    let i = out.state.pending_interrupt.as_ref().unwrap();
    assert_eq!(i.kind, InterruptKind::Approval);
    assert!(i.originating_step <= out.state.step_counter);
    assert!(sys.engine.registry().tool("list_failed_jobs").is_none());

    assert_eq!(
        sys.engine.run_turn("s", "another question here", "admin").unwrap_err(),
        EngineError::SessionBusy("s".into())
    );

    let done = sys.engine.resume("s", "yes").unwrap();
    assert_eq!(done.kind, OutcomeKind::Response, "{}", done.content);
    assert!(done.content.contains("nightly-report"));
    assert!(sys.engine.registry().tool("list_failed_jobs").is_some());
    assert_eq!(
        sys.engine.resume("s", "yes").unwrap_err(),
        EngineError::NoPendingInterrupt("s".into())
    );
}

#[test]
fn declined_approval_completes_with_explanation() {
    let sys = system("codegen-approval");
    let s = scenario::load("codegen-approval").unwrap();
    sys.engine.run_turn("s", &s.query, &s.role).unwrap();
    let done = sys.engine.resume("s", "no").unwrap();
    assert_eq!(done.kind, OutcomeKind::Response);
    assert!(done.content.contains("could be built"), "{}", done.content);
    assert!(sys.engine.registry().tool("list_failed_jobs").is_none());
}

#[test]
fn resume_unknown_session_is_missing_checkpoint() {
    let sys = mock_system(vec![accept()], true);
    assert_eq!(
        sys.engine.resume("ghost", "yes").unwrap_err(),
        EngineError::CheckpointMissing("ghost".into())
    );
}

#[test]
fn clarify_installs_interrupt_and_answer_joins_transcript() {
    let sys = mock_system(
        vec![
            accept(),
            MockEntry::new("[purpose:summarize]", "Done."),
            route(&["[user] demo"], "action: finish"),
            route(&[], "action: clarify\nmessage: Which namespace?"),
        ],
        true,
    );
    let out = sys.engine.run_turn("s", "show me the deployments", "viewer").unwrap();
    assert_eq!(out.kind, OutcomeKind::Interrupt);
    assert_eq!(out.content, "Which namespace?");
    let done = sys.engine.resume("s", "demo").unwrap();
    assert_eq!(done.state.status, WorkflowStatus::Completed);
    let users: Vec<&str> = done
        .state
        .transcript
        .iter()
        .filter(|e| e.actor == "user")
        .map(|e| e.content.as_str())
        .collect();
    assert_eq!(users, vec!["show me the deployments", "demo"]);
}

#[test]
fn unknown_agent_directive_fails_the_turn() {
    let sys = mock_system(vec![accept(), route(&[], "action: route_agent\ntarget_agent: Nonexistent")], true);
    let err = sys.engine.run_turn("s", "list the pods please", "viewer").unwrap_err();
    assert_eq!(err, EngineError::UnknownAgent("Nonexistent".into()));
    let state = sys.engine.session("s").unwrap().unwrap();
    assert_eq!(state.status, WorkflowStatus::Failed);
}

#[test]
fn unparseable_directive_exhausts_retries() {
    let sys = mock_system(vec![accept(), route(&[], "route somewhere")], true);
    let err = sys.engine.run_turn("s", "list the pods please", "viewer").unwrap_err();
    assert!(matches!(err, EngineError::DirectiveUnparseable(_)));
}

#[test]
fn retry_counter_is_capped() {
    let sys = mock_system(
        vec![
            accept(),
            MockEntry::new("[purpose:summarize]", "Gave up."),
            route(&[], "action: retry_task"),
        ],
        true,
    );
    let out = sys.engine.run_turn("s", "list the pods please", "viewer").unwrap();
    assert_eq!(out.state.status, WorkflowStatus::Completed);
    let cap = sys.engine.config().retry_cap;
    assert_eq!(out.state.per_task_retries.values().copied().max(), Some(cap));
    assert!(out.state.per_task_retries.values().all(|v| *v <= cap));
}

#[test]
fn loop_cap_fails_session() {
    let sys = mock_system(
        vec![
            accept(),
            MockEntry::new("[tool-select:Configs]", "<directive>\ntool: list_namespaces\n</directive>"),
            route(&[], "action: route_agent\ntarget_agent: Configs\nmessage: list namespaces"),
        ],
        true,
    );
    let out = sys.engine.run_turn("s", "list the namespaces forever", "viewer").unwrap();
    assert_eq!(out.kind, OutcomeKind::Failure);
    assert_eq!(out.state.iterations, sys.engine.config().loop_cap);
}

#[test]
fn supervisor_route_parses_mock_directive() {
    let d = parse_decision("<directive>\naction: route_agent\ntarget_agent: Logs\n</directive>").unwrap();
    assert_eq!(d.action, RouteAction::RouteAgent);
    assert_eq!(d.target_agent, Some(AgentName::Logs));
}

#[test]
fn second_turn_does_not_report_stale_outputs() {
    let sys = system("pod-health");
    let s = scenario::load("pod-health").unwrap();
    sys.replay(&s, "s").unwrap();
    let second = sys.engine.run_turn("s", &s.query, &s.role).unwrap();
    assert_eq!(second.state.turn_index, 1);
    assert!(second.content.contains("Pods checked: 6"), "{}", second.content);
    assert!(second.content.contains("Tool calls: 7 (0 failed)"), "{}", second.content);
}
