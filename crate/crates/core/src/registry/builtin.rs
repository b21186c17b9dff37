//! Built-in agents and their cluster-backed tools.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Map, Value};

use super::{AgentDescriptor, AgentName, FieldSpec, SemanticType};
use crate::kube::{parse_selector, ClusterBackend, KubeError, LifecycleAction, ResourceRef, VerbCategory, WriteMode};

pub type Handler = fn(&dyn ClusterBackend, &Map<String, Value>) -> Result<Value, KubeError>;

pub struct BuiltinTool {
    pub name: &'static str,
    pub agent: AgentName,
    pub category: VerbCategory,
    pub description: &'static str,
    pub schema: Vec<FieldSpec>,
    pub handler: Handler,
}

static ERROR_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(error|fatal|panic|exception|crashloopbackoff|oomkilled)\b").expect("static regex")
});

/// Whether a log line reports a failure.
pub fn is_error_line(line: &str) -> bool {
    ERROR_LINE.is_match(line)
}

fn req(name: &str, ty: SemanticType) -> FieldSpec {
    FieldSpec {
        name: name.to_string(),
        ty,
        required: true,
    }
}

fn opt(name: &str, ty: SemanticType) -> FieldSpec {
    FieldSpec {
        name: name.to_string(),
        ty,
        required: false,
    }
}

fn s<'a>(args: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str).filter(|v| !v.is_empty())
}

fn need<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, KubeError> {
    s(args, key).ok_or_else(|| KubeError::InvalidParams(format!("missing `{key}`")))
}

fn int(args: &Map<String, Value>, key: &str) -> Option<i64> {
    args.get(key).and_then(Value::as_i64)
}

fn list(args: &Map<String, Value>, key: &str) -> Option<Vec<String>> {
    args.get(key).and_then(Value::as_array).map(|items| {
        items
            .iter()
            .filter_map(Value::as_str)
            .map(str::to_string)
            .collect()
    })
}

fn kind_in(kind: &str, namespace: Option<&str>) -> ResourceRef {
    let mut r = ResourceRef::kind(kind);
    r.namespace = namespace.map(str::to_string);
    r
}

fn named(kind: &str, namespace: &str, name: &str) -> ResourceRef {
    ResourceRef::kind(kind).in_namespace(namespace).named(name)
}

fn one(c: &dyn ClusterBackend, r: &ResourceRef) -> Result<Value, KubeError> {
    c.read(r)?.into_iter().next().ok_or_else(|| KubeError::NotFound {
        kind: r.kind.clone(),
        namespace: r.namespace.clone(),
        name: r.name.clone().unwrap_or_default(),
    })
}

// --- Logs -----------------------------------------------------------------

fn get_pod_logs(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    let pod = need(a, "pod")?;
    let tail = match int(a, "tail") {
        Some(n) if n < 0 => return Err(KubeError::InvalidParams("tail must be >= 0".into())),
        Some(n) => Some(n as usize),
        None => None,
    };
    let text = c.get_logs(ns, pod, tail)?;
    let lines: Vec<&str> = text.lines().collect();
    let error_lines: Vec<&str> = lines.iter().copied().filter(|l| is_error_line(l)).collect();
    Ok(json!({
        "namespace": ns,
        "pod": pod,
        "lines": lines,
        "error_lines": error_lines,
        "has_errors": !error_lines.is_empty(),
    }))
}

fn watch_events(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let cursor = int(a, "cursor").unwrap_or(0).max(0) as u64;
    let max_items = int(a, "max_items").unwrap_or(50).clamp(0, 1000) as usize;
    let wait = int(a, "max_wait_ms").unwrap_or(0).clamp(0, 30_000) as u64;
    let batch = c.watch_events(s(a, "namespace"), cursor, max_items, std::time::Duration::from_millis(wait))?;
    Ok(serde_json::to_value(batch).unwrap_or_default())
}

fn list_namespace_events(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    Ok(Value::Array(c.read(&kind_in("event", Some(ns)))?))
}

// --- Configs --------------------------------------------------------------

fn list_namespaces(c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    let names: Vec<Value> = c
        .read(&ResourceRef::kind("namespace"))?
        .into_iter()
        .map(|d| d["name"].clone())
        .collect();
    Ok(Value::Array(names))
}

/// Compact pod summary; the final report is built from these rows.
pub fn pod_summary(doc: &Value) -> Value {
    json!({
        "namespace": doc["namespace"],
        "name": doc["name"],
        "phase": doc["status"]["phase"],
        "restart_count": doc["status"]["restart_count"],
        "containers": doc["spec"]["containers"],
        "node": doc["spec"]["node"],
    })
}

fn list_pods(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let mut r = kind_in("pod", s(a, "namespace"));
    if let Some(sel) = s(a, "selector") {
        r.selector = Some(parse_selector(sel)?);
    }
    Ok(Value::Array(c.read(&r)?.iter().map(pod_summary).collect()))
}

fn list_deployments(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(Value::Array(c.read(&kind_in("deployment", s(a, "namespace")))?))
}

fn get_service_config(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    one(c, &named("service", need(a, "namespace")?, need(a, "name")?))
}

fn validate_configmap(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let doc = one(c, &named("configmap", need(a, "namespace")?, need(a, "name")?))?;
    let data = doc["spec"]["data"].as_object().cloned().unwrap_or_default();
    let required = list(a, "required_keys").unwrap_or_default();
    let missing: Vec<&String> = required.iter().filter(|k| !data.contains_key(*k)).collect();
    let empty: Vec<&String> = data
        .iter()
        .filter(|(_, v)| v.as_str().is_some_and(|s| s.trim().is_empty()))
        .map(|(k, _)| k)
        .collect();
    Ok(json!({
        "name": doc["name"],
        "namespace": doc["namespace"],
        "keys": data.keys().collect::<Vec<_>>(),
        "missing_keys": missing,
        "empty_values": empty,
        "valid": missing.is_empty() && empty.is_empty(),
    }))
}

fn create_deployment(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    let name = need(a, "name")?;
    let replicas = int(a, "replicas").ok_or_else(|| KubeError::InvalidParams("missing `replicas`".into()))?;
    let mut spec = json!({"replicas": replicas, "labels": {"app": name}});
    if let Some(image) = s(a, "image") {
        spec["image"] = json!(image);
    }
    c.write(&named("deployment", ns, name), &json!({"spec": spec}), WriteMode::Create)
}

fn patch_configmap(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    let name = need(a, "name")?;
    let mut data = Map::new();
    for pair in list(a, "data").unwrap_or_default() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| KubeError::InvalidParams(format!("expected key=value, got {pair:?}")))?;
        data.insert(k.trim().to_string(), json!(v.trim()));
    }
    if data.is_empty() {
        return Err(KubeError::InvalidParams("`data` needs at least one key=value".into()));
    }
    c.write(&named("configmap", ns, name), &json!({"spec": {"data": data}}), WriteMode::Patch)
}

// --- RBAC -----------------------------------------------------------------

fn list_roles(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(Value::Array(c.read(&kind_in("role", s(a, "namespace")))?))
}

fn check_role_binding(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let subject = need(a, "subject")?;
    let category: VerbCategory = need(a, "category")?.parse()?;
    let r = kind_in(need(a, "kind")?, s(a, "namespace"));
    let d = c.access_review(subject, category, &r)?;
    Ok(json!({"subject": subject, "category": category, "kind": r.kind, "allowed": d.allowed, "reason": d.reason}))
}

fn inspect_service_account(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    let name = need(a, "name")?;
    let sa = one(c, &named("serviceaccount", ns, name))?;
    let subject = format!("system:serviceaccount:{ns}:{name}");
    let bindings: Vec<Value> = c
        .read(&kind_in("rolebinding", Some(ns)))?
        .into_iter()
        .filter(|b| {
            b["spec"]["subjects"]
                .as_array()
                .is_some_and(|s| s.iter().any(|x| x.as_str() == Some(&subject)))
        })
        .collect();
    Ok(json!({"service_account": sa, "subject": subject, "bindings": bindings}))
}

// --- Metrics --------------------------------------------------------------

fn get_cpu_usage(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let rows: Vec<Value> = c
        .read(&kind_in("podmetrics", s(a, "namespace")))?
        .into_iter()
        .map(|d| {
            json!({
                "namespace": d["namespace"],
                "pod": d["name"],
                "cpu_millicores": d["status"]["cpu_millicores"],
                "memory_mib": d["status"]["memory_mib"],
            })
        })
        .collect();
    Ok(Value::Array(rows))
}

fn get_node_metrics(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let mut r = ResourceRef::kind("nodemetrics");
    r.name = s(a, "node").map(str::to_string);
    let nodes: BTreeMap<String, Value> = c
        .read(&ResourceRef::kind("node"))?
        .into_iter()
        .filter_map(|n| n["name"].as_str().map(|k| (k.to_string(), n.clone())))
        .collect();
    let rows: Vec<Value> = c
        .read(&r)?
        .into_iter()
        .map(|m| {
            let name = m["name"].as_str().unwrap_or_default();
            let node = nodes.get(name);
            json!({
                "node": name,
                "usage": m["status"],
                "capacity": node.map(|n| n["status"]["capacity"].clone()),
                "schedulable": node.map(|n| n["spec"]["schedulable"].clone()),
            })
        })
        .collect();
    Ok(Value::Array(rows))
}

fn pod_network_io(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let mut r = kind_in("podmetrics", s(a, "namespace"));
    r.name = s(a, "pod").map(str::to_string);
    let rows: Vec<Value> = c
        .read(&r)?
        .into_iter()
        .map(|d| {
            json!({
                "namespace": d["namespace"],
                "pod": d["name"],
                "rx_bytes": d["status"]["net_rx_bytes"],
                "tx_bytes": d["status"]["net_tx_bytes"],
            })
        })
        .collect();
    Ok(Value::Array(rows))
}

// --- Security -------------------------------------------------------------

fn analyze_audit_logs(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let warnings: Vec<Value> = c
        .read(&kind_in("event", s(a, "namespace")))?
        .into_iter()
        .filter(|e| e["spec"]["type"] == "Warning")
        .collect();
    let mut by_reason: BTreeMap<String, u64> = BTreeMap::new();
    for w in &warnings {
        *by_reason.entry(w["spec"]["reason"].as_str().unwrap_or("unknown").to_string()).or_default() += 1;
    }
    Ok(json!({"warning_count": warnings.len(), "by_reason": by_reason, "warnings": warnings}))
}

// --- Lifecycle ------------------------------------------------------------

fn scale_deployment(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let replicas = int(a, "replicas").ok_or_else(|| KubeError::InvalidParams("missing `replicas`".into()))?;
    c.lifecycle(
        LifecycleAction::Scale,
        &named("deployment", need(a, "namespace")?, need(a, "name")?),
        &json!({"replicas": replicas}),
    )
}

fn cordon_node(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let undo = a.get("uncordon").and_then(Value::as_bool).unwrap_or(false);
    let action = if undo { LifecycleAction::Uncordon } else { LifecycleAction::Cordon };
    c.lifecycle(action, &ResourceRef::kind("node").named(need(a, "node")?), &Value::Null)
}

fn restart_pod(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    c.lifecycle(LifecycleAction::Restart, &named("pod", need(a, "namespace")?, need(a, "pod")?), &Value::Null)
}

fn evict_pod(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    c.lifecycle(LifecycleAction::Evict, &named("pod", need(a, "namespace")?, need(a, "pod")?), &Value::Null)
}

fn rollout_status(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    c.lifecycle(
        LifecycleAction::RolloutStatus,
        &named("deployment", need(a, "namespace")?, need(a, "name")?),
        &Value::Null,
    )
}

// --- Execution ------------------------------------------------------------

fn exec_in_pod(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let command: Vec<String> = need(a, "command")?.split_whitespace().map(str::to_string).collect();
    let out = c.exec_in_pod(need(a, "namespace")?, need(a, "pod")?, &command)?;
    if out.exit_code != 0 {
        return Err(KubeError::Backend(format!(
            "command exited with status {}: {}",
            out.exit_code,
            out.stderr.trim()
        )));
    }
    Ok(serde_json::to_value(out).unwrap_or_default())
}

// --- Deletion -------------------------------------------------------------

fn delete_pod(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let n = c.delete(&named("pod", need(a, "namespace")?, need(a, "pod")?), false)?;
    Ok(json!({"deleted": n}))
}

fn cleanup_jobs(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let states = list(a, "states").unwrap_or_else(|| vec!["Complete".into(), "Failed".into()]);
    let mut removed = Vec::new();
    for job in c.read(&kind_in("job", s(a, "namespace")))? {
        let state = job["status"]["state"].as_str().unwrap_or_default();
        if !states.iter().any(|s| s == state) {
            continue;
        }
        let (Some(ns), Some(name)) = (job["namespace"].as_str(), job["name"].as_str()) else {
            continue;
        };
        if c.delete(&named("job", ns, name), false)? > 0 {
            removed.push(format!("{ns}/{name}"));
        }
    }
    Ok(json!({"deleted": removed.len(), "jobs": removed}))
}

fn delete_namespace_resources(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let ns = need(a, "namespace")?;
    let kinds = list(a, "kinds").unwrap_or_else(|| {
        ["pod", "deployment", "service", "configmap", "job"].iter().map(|s| s.to_string()).collect()
    });
    let mut counts = BTreeMap::new();
    for kind in kinds {
        let n = c.delete(&kind_in(&kind, Some(ns)), true)?;
        counts.insert(kind, n);
    }
    Ok(json!({"namespace": ns, "deleted": counts}))
}

// --- AdvancedOps ----------------------------------------------------------

fn apply_manifest(c: &dyn ClusterBackend, a: &Map<String, Value>) -> Result<Value, KubeError> {
    let text = need(a, "manifest")?;
    let doc: Value = serde_json::from_str(text)
        .or_else(|_| toml::from_str::<Value>(text))
        .map_err(|e| KubeError::Validation(format!("manifest is neither JSON nor TOML: {e}")))?;
    Ok(serde_json::to_value(c.apply_manifest(&doc)?).unwrap_or_default())
}

// --- Stubs ----------------------------------------------------------------

fn unsupported(tool: &str, reason: &str) -> Value {
    json!({"supported": false, "tool": tool, "reason": reason})
}

fn port_forward(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("port_forward", "tunnels are not available through this interface"))
}

fn attach_container(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("attach_container", "interactive attach is not available through this interface"))
}

fn scan_vulnerabilities(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("scan_vulnerabilities", "no image scanner is configured"))
}

fn check_psp_violations(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("check_psp_violations", "pod security policies are not modeled"))
}

fn bind_pod(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("bind_pod", "manual scheduling is not modeled"))
}

fn approve_certificate(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("approve_certificate", "certificate signing requests are not modeled"))
}

fn finalize_resource(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("finalize_resource", "finalizers are not modeled"))
}

fn generate_k8s_script(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("generate_k8s_script", "runs through the code generation pipeline (invoke_codegen)"))
}

fn register_dynamic_tool(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("register_dynamic_tool", "runs through the code generation pipeline (invoke_codegen)"))
}

fn test_code_snippet(_c: &dyn ClusterBackend, _a: &Map<String, Value>) -> Result<Value, KubeError> {
    Ok(unsupported("test_code_snippet", "runs through the code generation pipeline (invoke_codegen)"))
}

pub fn builtin_tools() -> Vec<BuiltinTool> {
    use AgentName::*;
    use SemanticType::*;
    use VerbCategory as C;
    let t = |name, agent, category, description, schema, handler: Handler| BuiltinTool {
        name,
        agent,
        category,
        description,
        schema,
        handler,
    };
    vec![
        t("get_pod_logs", Logs, C::Read, "Fetch a pod's log lines and flag error lines.",
            vec![req("namespace", Text), req("pod", Text), opt("tail", Integer)], get_pod_logs),
        t("watch_events", Logs, C::Read, "Poll for cluster events newer than a cursor.",
            vec![opt("namespace", Text), opt("cursor", Integer), opt("max_items", Integer), opt("max_wait_ms", Integer)],
            watch_events),
        t("list_namespace_events", Logs, C::Read, "List all events recorded in a namespace.",
            vec![req("namespace", Text)], list_namespace_events),
        t("list_namespaces", Configs, C::Read, "List namespace names.", vec![], list_namespaces),
        t("list_pods", Configs, C::Read, "List pods with phase and restart count, in one namespace or all.",
            vec![opt("namespace", Text), opt("selector", Text)], list_pods),
        t("list_deployments", Configs, C::Read, "List deployments with replica counts.",
            vec![opt("namespace", Text)], list_deployments),
        t("get_service_config", Configs, C::Read, "Show a service's type, ports and external address.",
            vec![req("namespace", Text), req("name", Text)], get_service_config),
        t("validate_configmap", Configs, C::Read, "Check a configmap for required and empty keys.",
            vec![req("namespace", Text), req("name", Text), opt("required_keys", ListOfText)], validate_configmap),
        t("create_deployment", Configs, C::WriteModify, "Create a deployment with the given replica count.",
            vec![req("namespace", Text), req("name", Text), req("replicas", Integer), opt("image", Text)],
            create_deployment),
        t("patch_configmap", Configs, C::WriteModify, "Merge key=value pairs into a configmap.",
            vec![req("namespace", Text), req("name", Text), req("data", ListOfText)], patch_configmap),
        t("list_roles", Rbac, C::Read, "List roles and cluster roles with their rules.",
            vec![opt("namespace", Text)], list_roles),
        t("check_role_binding", Rbac, C::PermissionAuth, "Access review: may a subject perform a verb category on a kind?",
            vec![req("subject", Text), req("category", Text), req("kind", Text), opt("namespace", Text)],
            check_role_binding),
        t("inspect_service_account", Rbac, C::Read, "Show a service account and the bindings that name it.",
            vec![req("namespace", Text), req("name", Text)], inspect_service_account),
        t("get_cpu_usage", Metrics, C::Read, "CPU and memory usage per pod.",
            vec![opt("namespace", Text)], get_cpu_usage),
        t("get_node_metrics", Metrics, C::Read, "Usage and capacity per node.",
            vec![opt("node", Text)], get_node_metrics),
        t("pod_network_io", Metrics, C::Read, "Network receive/transmit bytes per pod.",
            vec![opt("namespace", Text), opt("pod", Text)], pod_network_io),
        t("analyze_audit_logs", Security, C::Read, "Summarize warning events by reason.",
            vec![opt("namespace", Text)], analyze_audit_logs),
        t("check_psp_violations", Security, C::Read, "Check pods against pod security policies.",
            vec![opt("namespace", Text)], check_psp_violations),
        t("scan_vulnerabilities", Security, C::Read, "Scan container images for known vulnerabilities.",
            vec![opt("namespace", Text)], scan_vulnerabilities),
        t("scale_deployment", Lifecycle, C::ScaleLifecycle, "Set a deployment's replica count.",
            vec![req("namespace", Text), req("name", Text), req("replicas", Integer)], scale_deployment),
        t("cordon_node", Lifecycle, C::ScaleLifecycle, "Mark a node unschedulable (or schedulable again).",
            vec![req("node", Text), opt("uncordon", Boolean)], cordon_node),
        t("restart_pod", Lifecycle, C::ScaleLifecycle, "Restart a pod.",
            vec![req("namespace", Text), req("pod", Text)], restart_pod),
        t("evict_pod", Lifecycle, C::ScaleLifecycle, "Evict a pod from its node.",
            vec![req("namespace", Text), req("pod", Text)], evict_pod),
        t("rollout_status", Lifecycle, C::Read, "Report whether a deployment's rollout is complete.",
            vec![req("namespace", Text), req("name", Text)], rollout_status),
        t("exec_in_pod", Execution, C::ExecuteProxy, "Run a command inside a running pod.",
            vec![req("namespace", Text), req("pod", Text), req("command", Text)], exec_in_pod),
        t("port_forward", Execution, C::ExecuteProxy, "Forward a local port to a pod.",
            vec![opt("namespace", Text), opt("pod", Text), opt("port", Integer)], port_forward),
        t("attach_container", Execution, C::ExecuteProxy, "Attach to a running container.",
            vec![opt("namespace", Text), opt("pod", Text)], attach_container),
        t("delete_pod", Deletion, C::Delete, "Delete one pod.",
            vec![req("namespace", Text), req("pod", Text)], delete_pod),
        t("cleanup_jobs", Deletion, C::Delete, "Delete finished jobs (Complete/Failed by default).",
            vec![opt("namespace", Text), opt("states", ListOfText)], cleanup_jobs),
        t("delete_namespace_resources", Deletion, C::Delete, "Delete all resources of the given kinds in a namespace.",
            vec![req("namespace", Text), opt("kinds", ListOfText)], delete_namespace_resources),
        t("apply_manifest", AdvancedOps, C::CustomAdvanced, "Create-or-update every resource in a manifest document.",
            vec![req("manifest", Text)], apply_manifest),
        t("bind_pod", AdvancedOps, C::CustomAdvanced, "Bind a pod to a node.",
            vec![opt("namespace", Text), opt("pod", Text), opt("node", Text)], bind_pod),
        t("approve_certificate", AdvancedOps, C::CustomAdvanced, "Approve a certificate signing request.",
            vec![opt("name", Text)], approve_certificate),
        t("finalize_resource", AdvancedOps, C::CustomAdvanced, "Clear finalizers on a stuck resource.",
            vec![opt("kind", Text), opt("namespace", Text), opt("name", Text)], finalize_resource),
        t("generate_k8s_script", CodeGenerator, C::Read, "Synthesize a new tool script.",
            vec![opt("task", Text)], generate_k8s_script),
        t("register_dynamic_tool", CodeGenerator, C::Read, "Register a synthesized tool.",
            vec![opt("name", Text)], register_dynamic_tool),
        t("test_code_snippet", CodeGenerator, C::Read, "Run a snippet in the sandbox.",
            vec![opt("code", Text)], test_code_snippet),
    ]
}

/// The ten standard agents.
pub fn default_descriptors() -> Vec<AgentDescriptor> {
    let tools = builtin_tools();
    AgentName::ALL
        .iter()
        .map(|&agent| {
            let (description, template) = match agent {
                AgentName::Logs => (
                    "Retrieves and filters logs and events for pods, nodes and the system.",
                    "You are the Logs agent. Fetch logs or events and point out error lines.",
                ),
                AgentName::Configs => (
                    "Inspects and manages declarative configuration of workloads and services.",
                    "You are the Configs agent. Inspect or change workload and service configuration.",
                ),
                AgentName::Rbac => (
                    "Audits access control policies and role bindings.",
                    "You are the RBAC agent. Answer questions about roles, bindings and access.",
                ),
                AgentName::Metrics => (
                    "Gathers resource and application performance metrics.",
                    "You are the Metrics agent. Report CPU, memory and network usage.",
                ),
                AgentName::Security => (
                    "Analyzes cluster security posture and detects violations.",
                    "You are the Security agent. Look for warnings and policy violations.",
                ),
                AgentName::Lifecycle => (
                    "Executes control actions on workloads and nodes.",
                    "You are the Lifecycle agent. Scale, restart, cordon or evict as asked.",
                ),
                AgentName::Execution => (
                    "Runs commands inside containers.",
                    "You are the Execution agent. Run the requested command in the named pod.",
                ),
                AgentName::Deletion => (
                    "Deletes individual or bulk resources.",
                    "You are the Deletion agent. Delete exactly what was asked, nothing more.",
                ),
                AgentName::AdvancedOps => (
                    "Handles server-side apply, binding and other advanced operations.",
                    "You are the AdvancedOps agent. Apply manifests and handle advanced operations.",
                ),
                AgentName::CodeGenerator => (
                    "Synthesizes and registers new tools when no existing tool fits.",
                    "You are the CodeGenerator agent. New tools are produced by the generation pipeline.",
                ),
            };
            AgentDescriptor {
                name: agent,
                description: description.to_string(),
                tool_names: tools.iter().filter(|t| t.agent == agent).map(|t| t.name.to_string()).collect(),
                prompt_template: template.to_string(),
            }
        })
        .collect()
}
