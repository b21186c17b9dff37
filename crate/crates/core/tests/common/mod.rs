//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use kubesteer_core::config::Settings;
use kubesteer_core::engine::WorkflowState;
use kubesteer_core::governance::{AuditLog, RoleTable};
use kubesteer_core::kube::model::{MetricSample, ObjKey, Pod, PodPhase};
use kubesteer_core::kube::{fixtures, ClusterModel, FakeCluster, VerbCategory};
use kubesteer_core::registry::{AgentRegistry, DispatchContext, ToolResult};
use kubesteer_core::scenario;
use kubesteer_core::system::System;
use serde_json::{json, Map, Value};

pub const POD_QUERY: &str = "List all pods and identify those with errors in each namespace";

pub fn system(name: &str) -> System {
    System::for_scenario(&scenario::load(name).unwrap(), Settings::default()).unwrap()
}

pub fn system_in(name: &str, dir: &Path) -> System {
    let settings = Settings {
        data_dir: Some(dir.to_path_buf()),
        ..Settings::default()
    };
    System::for_scenario(&scenario::load(name).unwrap(), settings).unwrap()
}

pub fn demo_model() -> ClusterModel {
    fixtures::seed("demo", None).unwrap()
}

/// A registry wired to a fresh demo cluster, for direct tool dispatch.
pub struct Rig {
    pub registry: AgentRegistry,
    pub cluster: FakeCluster,
    pub audit: AuditLog,
    pub roles: RoleTable,
}

impl Rig {
    pub fn demo() -> Self {
        Self {
            registry: AgentRegistry::with_defaults(),
            cluster: FakeCluster::new("demo", demo_model()),
            audit: AuditLog::in_memory(),
            roles: RoleTable::default(),
        }
    }

    pub fn dispatch(&self, tool: &str, args: Value) -> ToolResult {
        let spec = self.registry.tool(tool).unwrap_or_else(|| panic!("no tool {tool}"));
        let args: Map<String, Value> = args.as_object().cloned().unwrap_or_default();
        let ctx = DispatchContext {
            cluster: &self.cluster,
            sandbox: None,
            audit: &self.audit,
            roles: &self.roles,
            role: "admin",
            session_id: None,
            step: 1,
        };
        self.registry.dispatch(&spec, &args, &ctx).unwrap()
    }
}

// --- cluster oracles -------------------------------------------------------

/// `(namespace, name, phase, restarts)` for every pod, straight from the maps.
pub fn pod_rows(m: &ClusterModel) -> BTreeSet<(String, String, String, u64)> {
    let mut out = BTreeSet::new();
    for (k, p) in &m.pods {
        out.insert((k.namespace.clone(), k.name.clone(), p.phase.as_str().to_string(), p.restart_count as u64));
    }
    out
}

/// Access review by exhaustive search over bindings and roles.
pub fn access_oracle(m: &ClusterModel, subject: &str, category: VerbCategory, kind: &str, ns: Option<&str>) -> bool {
    for (bkey, binding) in &m.rolebindings {
        if !binding.subjects.iter().any(|s| s == subject) {
            continue;
        }
        if !bkey.namespace.is_empty() && ns != Some(bkey.namespace.as_str()) {
            continue;
        }
        let mut candidates = Vec::new();
        for (rkey, role) in &m.roles {
            if rkey.name == binding.role && (rkey.namespace == bkey.namespace || rkey.namespace.is_empty()) {
                candidates.push((rkey.namespace.is_empty(), role));
            }
        }
        // A namespaced role shadows a cluster role of the same name.
        candidates.sort_by_key(|(cluster, _)| *cluster);
        if let Some((_, role)) = candidates.first() {
            for rule in &role.rules {
                let kind_ok = rule.kinds.iter().any(|k| k == "*" || k == kind);
                if kind_ok && rule.categories.contains(&category) {
                    return true;
                }
            }
        }
    }
    false
}

fn new_pod(owner: &str, labels: &[(&str, &str)], node: &str) -> Pod {
    Pod {
        containers: vec![owner.to_string()],
        phase: PodPhase::Running,
        log_text: String::new(),
        restart_count: 0,
        labels: labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        owner: Some(owner.to_string()),
        node: Some(node.to_string()),
    }
}

fn add_pod(m: &mut ClusterModel, ns: &str, name: &str, pod: Pod) {
    let key = ObjKey::new(ns, name);
    m.pod_metrics.insert(key.clone(), MetricSample::default());
    m.pods.insert(key, pod);
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn data(r: &ToolResult) -> Result<&Value, String> {
    if r.is_success() {
        Ok(&r.data)
    } else {
        Err(format!("dispatch failed: {:?}", r.error_message))
    }
}

/// One dispatch per verb category against the fake cluster, each compared
/// with a brute-force enumeration or mutation of the raw model.
pub fn verb_conformance() -> Vec<(VerbCategory, Result<(), String>)> {
    vec![
        (VerbCategory::Read, conform_read()),
        (VerbCategory::WriteModify, conform_write()),
        (VerbCategory::Delete, conform_delete()),
        (VerbCategory::ExecuteProxy, conform_exec()),
        (VerbCategory::PermissionAuth, conform_access()),
        (VerbCategory::ScaleLifecycle, conform_scale()),
        (VerbCategory::CustomAdvanced, conform_apply()),
    ]
}

fn conform_read() -> Result<(), String> {
    let rig = Rig::demo();
    let r = rig.dispatch("list_pods", json!({}));
    let got: BTreeSet<(String, String, String, u64)> = data(&r)?
        .as_array()
        .ok_or("list_pods returned no array")?
        .iter()
        .map(|p| {
            (
                p["namespace"].as_str().unwrap_or_default().to_string(),
                p["name"].as_str().unwrap_or_default().to_string(),
                p["phase"].as_str().unwrap_or_default().to_string(),
                p["restart_count"].as_u64().unwrap_or(u64::MAX),
            )
        })
        .collect();
    let want = rig.cluster.with_model(pod_rows);
    check(got == want, || format!("list_pods {got:?} != oracle {want:?}"))?;

    let r = rig.dispatch("list_pods", json!({"namespace": "demo", "selector": "app=web"}));
    let got: BTreeSet<String> = data(&r)?
        .as_array()
        .ok_or("no array")?
        .iter()
        .map(|p| p["name"].as_str().unwrap_or_default().to_string())
        .collect();
    let want: BTreeSet<String> = rig.cluster.with_model(|m| {
        m.pods
            .iter()
            .filter(|(k, p)| k.namespace == "demo" && p.labels.get("app").map(String::as_str) == Some("web"))
            .map(|(k, _)| k.name.clone())
            .collect()
    });
    check(got == want, || format!("selector read {got:?} != {want:?}"))
}

fn conform_write() -> Result<(), String> {
    let rig = Rig::demo();
    let mut want = rig.cluster.model();
    let r = rig.dispatch(
        "create_deployment",
        json!({"namespace": "demo", "name": "cache", "replicas": 2, "image": "redis:7"}),
    );
    data(&r)?;
    want.deployments.insert(
        ObjKey::new("demo", "cache"),
        kubesteer_core::kube::model::Deployment {
            replicas: 2,
            ready_replicas: 2,
            strategy: "RollingUpdate".into(),
            image: "redis:7".into(),
            labels: [("app".to_string(), "cache".to_string())].into(),
        },
    );
    add_pod(&mut want, "demo", "cache-0", new_pod("cache", &[("app", "cache")], "node-1"));
    add_pod(&mut want, "demo", "cache-1", new_pod("cache", &[("app", "cache")], "node-2"));
    let got = rig.cluster.model();
    check(got == want, || "model after create_deployment differs from oracle mutation".into())?;
    let again = rig.dispatch("create_deployment", json!({"namespace": "demo", "name": "cache", "replicas": 1}));
    check(!again.is_success() && rig.cluster.model() == want, || "duplicate create was not refused".into())
}

fn conform_delete() -> Result<(), String> {
    let rig = Rig::demo();
    let mut want = rig.cluster.model();
    let r = rig.dispatch("delete_pod", json!({"namespace": "default", "pod": "batch-worker"}));
    check(data(&r)? == &json!({"deleted": 1}), || format!("delete_pod returned {}", r.data))?;
    let key = ObjKey::new("default", "batch-worker");
    want.pods.remove(&key);
    want.pod_metrics.remove(&key);
    check(rig.cluster.model() == want, || "model after delete_pod differs from oracle".into())?;

    let mut want = rig.cluster.model();
    let r = rig.dispatch("cleanup_jobs", json!({"namespace": "default"}));
    let finished: Vec<String> = want
        .jobs
        .iter()
        .filter(|(k, j)| {
            k.namespace == "default"
                && matches!(
                    j.state,
                    kubesteer_core::kube::model::JobState::Complete | kubesteer_core::kube::model::JobState::Failed
                )
        })
        .map(|(k, _)| format!("{}/{}", k.namespace, k.name))
        .collect();
    want.jobs.retain(|k, _| !finished.contains(&format!("{}/{}", k.namespace, k.name)));
    check(data(&r)?["deleted"] == json!(finished.len()), || format!("cleanup_jobs returned {}", r.data))?;
    check(rig.cluster.model() == want, || "model after cleanup_jobs differs from oracle".into())
}

fn conform_exec() -> Result<(), String> {
    let rig = Rig::demo();
    let before = rig.cluster.model();
    let r = rig.dispatch("exec_in_pod", json!({"namespace": "demo", "pod": "web-0", "command": "env"}));
    let rule = before
        .exec_table
        .iter()
        .find(|rule| rule.command == "env")
        .ok_or("fixture has no env rule")?;
    let want_stdout = rule.stdout.replace("{pod}", "web-0").replace("{namespace}", "demo");
    let got = data(&r)?;
    check(got["stdout"] == json!(want_stdout) && got["exit_code"] == json!(rule.exit_code), || {
        format!("exec output {got}")
    })?;
    check(rig.cluster.model() == before, || "exec mutated the model".into())?;
    let crashing = rig.dispatch("exec_in_pod", json!({"namespace": "default", "pod": "batch-worker", "command": "env"}));
    check(!crashing.is_success(), || "exec into a non-running pod succeeded".into())
}

fn conform_access() -> Result<(), String> {
    let rig = Rig::demo();
    let model = rig.cluster.model();
    let subjects = ["viewer", "admin", "system:serviceaccount:demo:ci-bot"];
    let mut checked = 0;
    for subject in subjects {
        for category in VerbCategory::ALL {
            for kind in ["pod", "secret", "deployment"] {
                for ns in ["demo", "default"] {
                    let r = rig.dispatch(
                        "check_role_binding",
                        json!({"subject": subject, "category": category.as_str(), "kind": kind, "namespace": ns}),
                    );
                    let got = data(&r)?["allowed"].as_bool().ok_or("no allowed flag")?;
                    let want = access_oracle(&model, subject, category, kind, Some(ns));
                    check(got == want, || format!("{subject} {category} {kind} in {ns}: got {got}, oracle {want}"))?;
                    checked += 1;
                }
            }
        }
    }
    check(checked == 126, || format!("only {checked} reviews"))?;
    check(rig.cluster.model() == model, || "access review mutated the model".into())
}

fn conform_scale() -> Result<(), String> {
    let rig = Rig::demo();
    let mut want = rig.cluster.model();
    let r = rig.dispatch("scale_deployment", json!({"namespace": "demo", "name": "web", "replicas": 3}));
    check(data(&r)?["spec"]["replicas"] == json!(3), || format!("scale returned {}", r.data))?;
    let key = ObjKey::new("demo", "web");
    let dep = want.deployments.get_mut(&key).ok_or("no web deployment")?;
    dep.replicas = 3;
    dep.ready_replicas = 3;
    add_pod(&mut want, "demo", "web-2", new_pod("web", &[("app", "web")], "node-1"));
    check(rig.cluster.model() == want, || "model after scale up differs from oracle".into())?;

    let r = rig.dispatch("scale_deployment", json!({"namespace": "demo", "name": "web", "replicas": 1}));
    data(&r)?;
    let dep = want.deployments.get_mut(&key).ok_or("no web deployment")?;
    dep.replicas = 1;
    dep.ready_replicas = 1;
    for name in ["web-1", "web-2"] {
        let k = ObjKey::new("demo", name);
        want.pods.remove(&k);
        want.pod_metrics.remove(&k);
    }
    check(rig.cluster.model() == want, || "model after scale down differs from oracle".into())
}

fn conform_apply() -> Result<(), String> {
    let rig = Rig::demo();
    let mut want = rig.cluster.model();
    let manifest = json!({"items": [
        {"kind": "deployment", "namespace": "demo", "name": "cache",
         "spec": {"replicas": 1, "image": "redis:7", "labels": {"app": "cache"}}},
        {"kind": "deployment", "namespace": "demo", "name": "api",
         "spec": {"replicas": 3, "image": "registry.local/api:1.5.0", "labels": {"app": "api"}}},
    ]})
    .to_string();
    let r = rig.dispatch("apply_manifest", json!({"manifest": manifest}));
    let results: Vec<&str> = data(&r)?
        .as_array()
        .ok_or("no outcomes")?
        .iter()
        .map(|o| o["result"].as_str().unwrap_or_default())
        .collect();
    check(results == ["created", "updated"], || format!("apply results {results:?}"))?;

    want.deployments.insert(
        ObjKey::new("demo", "cache"),
        kubesteer_core::kube::model::Deployment {
            replicas: 1,
            ready_replicas: 1,
            strategy: "RollingUpdate".into(),
            image: "redis:7".into(),
            labels: [("app".to_string(), "cache".to_string())].into(),
        },
    );
    add_pod(&mut want, "demo", "cache-0", new_pod("cache", &[("app", "cache")], "node-1"));
    let api = want.deployments.get_mut(&ObjKey::new("demo", "api")).ok_or("no api")?;
    api.replicas = 3;
    api.ready_replicas = 3;
    api.image = "registry.local/api:1.5.0".into();
    add_pod(&mut want, "demo", "api-2", new_pod("api", &[("app", "api")], "node-1"));
    check(rig.cluster.model() == want, || "model after apply differs from pre/post oracle".into())?;

    let r = rig.dispatch("apply_manifest", json!({"manifest": manifest}));
    let results: Vec<&str> = data(&r)?
        .as_array()
        .ok_or("no outcomes")?
        .iter()
        .map(|o| o["result"].as_str().unwrap_or_default())
        .collect();
    check(results == ["unchanged", "unchanged"], || format!("re-apply results {results:?}"))?;
    check(rig.cluster.model() == want, || "re-apply changed the model".into())
}

// --- workflow oracles --------------------------------------------------------

/// The state as JSON with the session identity removed, for structural diffs.
pub fn structural(state: &WorkflowState) -> Value {
    let mut v = serde_json::to_value(state).unwrap();
    v.as_object_mut().unwrap().remove("session_id");
    v
}
