//! Prompt text for the supervisor and summarizer, and the deterministic
//! report appended to every final answer.

use std::collections::BTreeMap;

use serde_json::Value;

use super::state::{RouteAction, WorkflowState};
use crate::registry::AgentRegistry;

const MAX_DATA_CHARS: usize = 4000;

pub fn truncate(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let mut out: String = text.chars().take(max).collect();
    out.push_str(" ...(truncated)");
    out
}

pub fn supervisor_system(registry: &AgentRegistry) -> String {
    let mut s = String::from(
        "You supervise a Kubernetes operations assistant and delegate work to specialist agents.\nAgents:\n",
    );
    for a in registry.agents() {
        s.push_str(&format!("- {}: {}\n", a.name, a.description));
    }
    let actions: Vec<&str> = [
        RouteAction::RouteAgent,
        RouteAction::Respond,
        RouteAction::Clarify,
        RouteAction::RejectResult,
        RouteAction::RetryTask,
        RouteAction::InvokeCodegen,
        RouteAction::Finish,
    ]
    .iter()
    .map(|a| a.as_str())
    .collect();
    s.push_str(&format!(
        "Decide the next step. Reply with exactly one block:\n<directive>\naction: {}\ntarget_agent: <agent name, for route_agent and invoke_codegen>\nmessage: <task for the agent, question for the user, or the answer>\nhistory: <yes to see earlier turns, optional>\n</directive>\nFinish once the results answer the request.",
        actions.join(" | ")
    ));
    s
}

fn query_header(state: &WorkflowState) -> String {
    let Some(q) = &state.query else {
        return String::new();
    };
    let mut s = format!("Query: {}\n", q.raw_text);
    if let Some(i) = &q.intent {
        s.push_str(&format!("Intent: {i}\n"));
    }
    let ns = match &q.scope.namespaces {
        crate::gateway::Namespaces::All => "ALL".to_string(),
        crate::gateway::Namespaces::List(v) => v.join(","),
    };
    s.push_str(&format!("Scope: namespaces={ns}"));
    if !q.scope.resource_kinds.is_empty() {
        s.push_str(&format!(" kinds={}", q.scope.resource_kinds.join(",")));
    }
    if !q.scope.name_selectors.is_empty() {
        s.push_str(&format!(" names={}", q.scope.name_selectors.join(",")));
    }
    s.push('\n');
    s
}

/// Current-turn progress as `[actor] content` lines. The opening user
/// query is carried by the header instead.
fn progress(state: &WorkflowState) -> String {
    let mut s = String::new();
    let turn = state.turn_transcript();
    for e in turn.iter().skip(1) {
        s.push_str(&format!("[{}] {}\n", e.actor, truncate(&e.content, MAX_DATA_CHARS)));
    }
    if state.include_history {
        s.push_str("Earlier outputs:\n");
        for (agent, o) in state.turn_outputs() {
            if o.result.produced_at_step < state.turn_step_start {
                s.push_str(&format!(
                    "- {agent}/{}: {}\n",
                    o.tool,
                    truncate(&o.result.envelope().to_string(), MAX_DATA_CHARS)
                ));
            }
        }
    }
    s
}

pub fn supervisor_user(state: &WorkflowState) -> String {
    format!("[supervisor]\n{}Progress:\n{}", query_header(state), progress(state))
}

/// Context handed to argument extraction: results so far, without the
/// transcript's actor tags.
pub fn args_context(state: &WorkflowState) -> String {
    let mut s = String::new();
    for (agent, o) in state.turn_outputs() {
        s.push_str(&format!(
            "- {agent}/{}: {}\n",
            o.tool,
            truncate(&o.result.envelope().to_string(), MAX_DATA_CHARS)
        ));
    }
    s
}

pub fn summarize_user(state: &WorkflowState) -> String {
    format!("[summarize]\n{}Progress:\n{}", query_header(state), progress(state))
}

pub const SUMMARIZE_SYSTEM: &str =
    "Write a short answer for the operator from the progress below. Mention problems found. Do not invent data.";

#[derive(Debug, Default)]
struct PodRow {
    phase: Option<String>,
    restarts: Option<i64>,
    has_errors: bool,
}

impl PodRow {
    fn flagged(&self) -> bool {
        self.has_errors || matches!(self.phase.as_deref(), Some("Failed" | "CrashLoopBackOff"))
    }
}

/// Pod health table and tool-call tally built from this turn's outputs.
pub fn report(state: &WorkflowState) -> String {
    let mut pods: BTreeMap<(String, String), PodRow> = BTreeMap::new();
    let mut calls = 0;
    let mut failed = Vec::new();
    for (agent, o) in state.turn_outputs() {
        if o.tool == "codegen" || o.result.produced_at_step < state.turn_step_start {
            continue;
        }
        calls += 1;
        if !o.result.is_success() {
            failed.push(format!(
                "- {agent}/{}: {}",
                o.tool,
                o.result.error_message.as_deref().unwrap_or("error")
            ));
            continue;
        }
        match o.tool.as_str() {
            "list_pods" => {
                for p in o.result.data.as_array().into_iter().flatten() {
                    let (Some(ns), Some(name)) = (p["namespace"].as_str(), p["name"].as_str()) else {
                        continue;
                    };
                    let row = pods.entry((ns.to_string(), name.to_string())).or_default();
                    row.phase = p["phase"].as_str().map(str::to_string);
                    row.restarts = p["restart_count"].as_i64();
                }
            }
            "get_pod_logs" => {
                let d = &o.result.data;
                let (Some(ns), Some(name)) = (d["namespace"].as_str(), d["pod"].as_str()) else {
                    continue;
                };
                let row = pods.entry((ns.to_string(), name.to_string())).or_default();
                row.has_errors |= d["has_errors"].as_bool().unwrap_or(false);
            }
            _ => {}
        }
    }
    let mut s = String::new();
    if !pods.is_empty() {
        s.push_str(&format!("Pods checked: {}\n", pods.len()));
        for ((ns, name), row) in &pods {
            s.push_str(&format!(
                "- {ns}/{name} phase={} restarts={} {}\n",
                row.phase.as_deref().unwrap_or("?"),
                row.restarts.map(|r| r.to_string()).unwrap_or_else(|| "?".into()),
                if row.flagged() { "[ERROR]" } else { "[ok]" }
            ));
        }
        let flagged: Vec<String> = pods
            .iter()
            .filter(|(_, r)| r.flagged())
            .map(|((ns, n), _)| format!("{ns}/{n}"))
            .collect();
        s.push_str(&format!(
            "Pods with errors: {}\n",
            if flagged.is_empty() { "none".to_string() } else { flagged.join(", ") }
        ));
    }
    s.push_str(&format!("Tool calls: {calls} ({} failed)\n", failed.len()));
    for f in failed {
        s.push_str(&f);
        s.push('\n');
    }
    s.trim_end().to_string()
}

/// Narrative used when the summarizing call fails.
pub fn fallback_narrative(state: &WorkflowState) -> String {
    let raw = state.query.as_ref().map(|q| q.raw_text.as_str()).unwrap_or("");
    format!("Finished working on: {raw}")
}

/// Extracts `ns/pod` names flagged in a rendered report.
pub fn flagged_pods(report: &str) -> Vec<String> {
    report
        .lines()
        .filter(|l| l.starts_with("- ") && l.ends_with("[ERROR]"))
        .filter_map(|l| l[2..].split_whitespace().next().map(str::to_string))
        .collect()
}

pub fn data_summary(v: &Value) -> String {
    match v {
        Value::Array(a) => format!("{} item(s)", a.len()),
        Value::Object(o) if o.contains_key("supported") && o["supported"] == false => "not supported".into(),
        Value::Object(o) if o.contains_key("error_lines") => match o["error_lines"].as_array().map_or(0, Vec::len) {
            0 => "no error lines".into(),
            n => format!("{n} error line(s)"),
        },
        _ => "ok".into(),
    }
}
