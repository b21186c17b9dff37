//! Thin REST adapter for a live API server.
//!
//! Maps the backend contract onto plain HTTP calls against the core, apps,
//! batch, rbac and metrics API groups, and renders responses into the same
//! normalized document shape as the fake backend. Exec needs a streaming
//! upgrade and is reported as unsupported.

use std::path::Path;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::model::REDACTED;
use super::{
    AccessDecision, ApplyOutcome, ApplyResult, ClusterBackend, EventBatch, ExecOutput, Kind, KubeError,
    LifecycleAction, ResourceRef, VerbCategory, WriteMode,
};

/// Credentials file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealClusterConfig {
    /// e.g. `https://10.0.0.1:6443`
    pub server: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub insecure_skip_tls_verify: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    30
}

impl RealClusterConfig {
    pub fn load(path: &Path) -> Result<Self, KubeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KubeError::Backend(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| KubeError::Backend(format!("{}: {e}", path.display())))
    }
}

pub struct RealCluster {
    config: RealClusterConfig,
    client: Client,
}

impl std::fmt::Debug for RealCluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealCluster").field("server", &self.config.server).finish_non_exhaustive()
    }
}

struct Endpoint {
    group_prefix: &'static str,
    plural: &'static str,
    namespaced: bool,
    api_kind: &'static str,
    api_version: &'static str,
}

fn endpoint(kind: Kind, cluster_scoped_rbac: bool) -> Endpoint {
    let e = |group_prefix, plural, namespaced, api_kind, api_version| Endpoint {
        group_prefix,
        plural,
        namespaced,
        api_kind,
        api_version,
    };
    match kind {
        Kind::Namespace => e("/api/v1", "namespaces", false, "Namespace", "v1"),
        Kind::Pod => e("/api/v1", "pods", true, "Pod", "v1"),
        Kind::Service => e("/api/v1", "services", true, "Service", "v1"),
        Kind::ConfigMap => e("/api/v1", "configmaps", true, "ConfigMap", "v1"),
        Kind::Secret => e("/api/v1", "secrets", true, "Secret", "v1"),
        Kind::ServiceAccount => e("/api/v1", "serviceaccounts", true, "ServiceAccount", "v1"),
        Kind::Event => e("/api/v1", "events", true, "Event", "v1"),
        Kind::Node => e("/api/v1", "nodes", false, "Node", "v1"),
        Kind::Deployment => e("/apis/apps/v1", "deployments", true, "Deployment", "apps/v1"),
        Kind::Job => e("/apis/batch/v1", "jobs", true, "Job", "batch/v1"),
        Kind::Role if cluster_scoped_rbac => e(
            "/apis/rbac.authorization.k8s.io/v1",
            "clusterroles",
            false,
            "ClusterRole",
            "rbac.authorization.k8s.io/v1",
        ),
        Kind::Role => e("/apis/rbac.authorization.k8s.io/v1", "roles", true, "Role", "rbac.authorization.k8s.io/v1"),
        Kind::RoleBinding if cluster_scoped_rbac => e(
            "/apis/rbac.authorization.k8s.io/v1",
            "clusterrolebindings",
            false,
            "ClusterRoleBinding",
            "rbac.authorization.k8s.io/v1",
        ),
        Kind::RoleBinding => e(
            "/apis/rbac.authorization.k8s.io/v1",
            "rolebindings",
            true,
            "RoleBinding",
            "rbac.authorization.k8s.io/v1",
        ),
        Kind::PodMetrics => e("/apis/metrics.k8s.io/v1beta1", "pods", true, "PodMetrics", "metrics.k8s.io/v1beta1"),
        Kind::NodeMetrics => e("/apis/metrics.k8s.io/v1beta1", "nodes", false, "NodeMetrics", "metrics.k8s.io/v1beta1"),
    }
}

fn path_for(kind: Kind, namespace: Option<&str>, name: Option<&str>) -> String {
    let ep = endpoint(kind, namespace.is_none());
    let mut path = ep.group_prefix.to_string();
    if ep.namespaced {
        if let Some(ns) = namespace {
            path.push_str(&format!("/namespaces/{ns}"));
        }
    }
    path.push('/');
    path.push_str(ep.plural);
    if let Some(n) = name {
        path.push('/');
        path.push_str(n);
    }
    path
}

fn selector_query(target: &ResourceRef) -> Option<String> {
    target.selector.as_ref().map(|sel| {
        sel.iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    })
}

/// Renders an API object as `{kind, namespace, name, spec, status}`.
pub fn normalize(kind: Kind, obj: &Value) -> Value {
    let meta = &obj["metadata"];
    let spec = match kind {
        Kind::ConfigMap => json!({"data": obj.get("data").cloned().unwrap_or(json!({}))}),
        Kind::Secret => {
            let keys: Map<String, Value> = obj
                .get("data")
                .and_then(Value::as_object)
                .map(|d| d.keys().map(|k| (k.clone(), json!(REDACTED))).collect())
                .unwrap_or_default();
            json!({"data": keys})
        }
        Kind::Role => json!({"rules": obj.get("rules").cloned().unwrap_or(json!([]))}),
        Kind::RoleBinding => json!({
            "role": obj["roleRef"]["name"],
            "subjects": obj.get("subjects").and_then(Value::as_array).map(|s| {
                s.iter().filter_map(|x| x["name"].as_str().map(str::to_string)).collect::<Vec<_>>()
            }).unwrap_or_default(),
        }),
        Kind::Event => json!({
            "type": obj["type"],
            "reason": obj["reason"],
            "message": obj["message"],
            "involved_object": format!(
                "{}/{}",
                obj["involvedObject"]["kind"].as_str().unwrap_or_default().to_ascii_lowercase(),
                obj["involvedObject"]["name"].as_str().unwrap_or_default()
            ),
        }),
        Kind::PodMetrics | Kind::NodeMetrics => json!({}),
        _ => obj.get("spec").cloned().unwrap_or(json!({})),
    };
    let status = match kind {
        Kind::PodMetrics => json!({"containers": obj.get("containers").cloned().unwrap_or(json!([]))}),
        Kind::NodeMetrics => json!({"usage": obj.get("usage").cloned().unwrap_or(json!({}))}),
        Kind::Event => json!({"timestamp": obj.get("lastTimestamp").cloned().unwrap_or(Value::Null)}),
        _ => obj.get("status").cloned().unwrap_or(json!({})),
    };
    json!({
        "kind": kind.as_str(),
        "namespace": meta.get("namespace").cloned().unwrap_or(Value::Null),
        "name": meta.get("name").cloned().unwrap_or(Value::Null),
        "spec": spec,
        "status": status,
    })
}

/// Builds an API object from a normalized manifest, or passes a native one
/// (anything with `apiVersion`) through unchanged.
fn to_api_object(kind: Kind, namespace: Option<&str>, name: &str, manifest: &Value) -> Value {
    if manifest.get("apiVersion").is_some() {
        return manifest.clone();
    }
    let ep = endpoint(kind, namespace.is_none());
    let mut metadata = json!({"name": name});
    if ep.namespaced {
        if let Some(ns) = namespace {
            metadata["namespace"] = json!(ns);
        }
    }
    let spec = manifest.get("spec").cloned().unwrap_or(json!({}));
    let mut obj = json!({"apiVersion": ep.api_version, "kind": ep.api_kind, "metadata": metadata});
    match kind {
        Kind::ConfigMap | Kind::Secret => {
            obj["data"] = spec.get("data").cloned().unwrap_or(json!({}));
            if kind == Kind::Secret {
                obj["stringData"] = obj["data"].take();
            }
        }
        _ => obj["spec"] = spec,
    }
    obj
}

impl RealCluster {
    pub fn new(config: RealClusterConfig) -> Result<Self, KubeError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .danger_accept_invalid_certs(config.insecure_skip_tls_verify)
            .build()
            .map_err(|e| KubeError::Backend(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn from_file(path: &Path) -> Result<Self, KubeError> {
        Self::new(RealClusterConfig::load(path)?)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.server.trim_end_matches('/'), path)
    }

    fn auth(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.config.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn send(&self, rb: RequestBuilder, what: &str) -> Result<Response, KubeError> {
        let resp = self
            .auth(rb)
            .send()
            .map_err(|e| KubeError::Backend(format!("{what}: {e}")))?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        Err(match status {
            StatusCode::NOT_FOUND => KubeError::NotFound {
                kind: what.to_string(),
                namespace: None,
                name: body,
            },
            StatusCode::CONFLICT => KubeError::AlreadyExists {
                kind: what.to_string(),
                name: body,
            },
            StatusCode::BAD_REQUEST | StatusCode::UNPROCESSABLE_ENTITY => KubeError::Validation(body),
            _ => KubeError::Backend(format!("{what}: {status}: {body}")),
        })
    }

    fn get_json(&self, path: &str, query: &[(&str, String)]) -> Result<Value, KubeError> {
        let resp = self.send(self.client.get(self.url(path)).query(query), path)?;
        resp.json().map_err(|e| KubeError::Backend(e.to_string()))
    }

    fn send_json(&self, rb: RequestBuilder, what: &str) -> Result<Value, KubeError> {
        self.send(rb, what)?
            .json()
            .map_err(|e| KubeError::Backend(e.to_string()))
    }

    fn merge_patch(&self, path: &str, body: &Value) -> Result<Value, KubeError> {
        let rb = self
            .client
            .patch(self.url(path))
            .header("Content-Type", "application/merge-patch+json")
            .body(body.to_string());
        self.send_json(rb, path)
    }
}

fn name_of(target: &ResourceRef) -> Result<&str, KubeError> {
    target
        .name
        .as_deref()
        .filter(|n| !n.is_empty())
        .ok_or_else(|| KubeError::Validation("operation requires a name".into()))
}

fn items(list: &Value) -> Vec<Value> {
    list.get("items").and_then(Value::as_array).cloned().unwrap_or_default()
}

fn verb_for(category: VerbCategory) -> (&'static str, Option<&'static str>) {
    match category {
        VerbCategory::Read => ("get", None),
        VerbCategory::WriteModify => ("update", None),
        VerbCategory::Delete => ("delete", None),
        VerbCategory::ExecuteProxy => ("create", Some("exec")),
        VerbCategory::PermissionAuth => ("impersonate", None),
        VerbCategory::ScaleLifecycle => ("update", Some("scale")),
        VerbCategory::CustomAdvanced => ("patch", None),
    }
}

impl ClusterBackend for RealCluster {
    fn name(&self) -> &str {
        &self.config.server
    }

    fn read(&self, target: &ResourceRef) -> Result<Vec<Value>, KubeError> {
        let kind = target.validate()?;
        let ns = target.namespace.as_deref();
        if let Some(name) = target.name.as_deref() {
            return match self.get_json(&path_for(kind, ns, Some(name)), &[]) {
                Ok(obj) => Ok(vec![normalize(kind, &obj)]),
                Err(KubeError::NotFound { .. }) => Ok(Vec::new()),
                Err(e) => Err(e),
            };
        }
        let mut query = Vec::new();
        if let Some(sel) = selector_query(target) {
            query.push(("labelSelector", sel));
        }
        let list = self.get_json(&path_for(kind, ns, None), &query)?;
        Ok(items(&list).iter().map(|o| normalize(kind, o)).collect())
    }

    fn get_logs(&self, namespace: &str, pod: &str, tail: Option<usize>) -> Result<String, KubeError> {
        let mut query = Vec::new();
        if let Some(n) = tail {
            query.push(("tailLines", n.to_string()));
        }
        let path = format!("{}/log", path_for(Kind::Pod, Some(namespace), Some(pod)));
        let resp = self.send(self.client.get(self.url(&path)).query(&query), "pod")?;
        resp.text().map_err(|e| KubeError::Backend(e.to_string()))
    }

    fn watch_events(
        &self,
        namespace: Option<&str>,
        cursor: u64,
        max_items: usize,
        _max_wait: Duration,
    ) -> Result<EventBatch, KubeError> {
        // Single list call; the cursor is a position in the listed order.
        let list = self.get_json(&path_for(Kind::Event, namespace, None), &[])?;
        let all = items(&list);
        let start = (cursor as usize).min(all.len());
        let end = (start + max_items).min(all.len());
        Ok(EventBatch {
            events: all[start..end].iter().map(|o| normalize(Kind::Event, o)).collect(),
            cursor: end as u64,
        })
    }

    fn write(&self, target: &ResourceRef, manifest: &Value, mode: WriteMode) -> Result<Value, KubeError> {
        let kind = target.validate()?;
        let name = name_of(target)?;
        let ns = target.namespace.as_deref();
        let body = to_api_object(kind, ns, name, manifest);
        let obj = match mode {
            WriteMode::Create => self.send_json(
                self.client.post(self.url(&path_for(kind, ns, None))).json(&body),
                kind.as_str(),
            )?,
            WriteMode::Update | WriteMode::Replace => self.send_json(
                self.client.put(self.url(&path_for(kind, ns, Some(name)))).json(&body),
                kind.as_str(),
            )?,
            WriteMode::Patch => {
                let mut patch = body;
                if let Some(o) = patch.as_object_mut() {
                    o.remove("apiVersion");
                    o.remove("kind");
                    o.remove("metadata");
                }
                self.merge_patch(&path_for(kind, ns, Some(name)), &patch)?
            }
        };
        Ok(normalize(kind, &obj))
    }

    fn delete(&self, target: &ResourceRef, collection: bool) -> Result<usize, KubeError> {
        let kind = target.validate()?;
        let ns = target.namespace.as_deref();
        if !collection {
            let name = name_of(target)?;
            self.send(self.client.delete(self.url(&path_for(kind, ns, Some(name)))), kind.as_str())?;
            return Ok(1);
        }
        let victims = self.read(target)?;
        let mut count = 0;
        for doc in victims {
            let (Some(name), item_ns) = (doc["name"].as_str(), doc["namespace"].as_str()) else {
                continue;
            };
            match self.send(
                self.client.delete(self.url(&path_for(kind, item_ns, Some(name)))),
                kind.as_str(),
            ) {
                Ok(_) => count += 1,
                Err(KubeError::NotFound { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(count)
    }

    fn exec_in_pod(&self, _namespace: &str, _pod: &str, _command: &[String]) -> Result<ExecOutput, KubeError> {
        Err(KubeError::Unsupported(
            "exec requires a streaming connection; not available over plain REST".into(),
        ))
    }

    fn access_review(
        &self,
        subject: &str,
        category: VerbCategory,
        target: &ResourceRef,
    ) -> Result<AccessDecision, KubeError> {
        let kind = target.validate()?;
        let (verb, subresource) = verb_for(category);
        let ep = endpoint(kind, target.namespace.is_none());
        let mut attrs = json!({"verb": verb, "resource": ep.plural});
        if let Some(ns) = &target.namespace {
            attrs["namespace"] = json!(ns);
        }
        if let Some(sub) = subresource {
            attrs["subresource"] = json!(sub);
        }
        let group = ep.api_version.rsplit_once('/').map(|(g, _)| g).unwrap_or("");
        attrs["group"] = json!(group);
        let body = json!({
            "apiVersion": "authorization.k8s.io/v1",
            "kind": "SubjectAccessReview",
            "spec": {"user": subject, "resourceAttributes": attrs},
        });
        let resp = self.send_json(
            self.client
                .post(self.url("/apis/authorization.k8s.io/v1/subjectaccessreviews"))
                .json(&body),
            "subjectaccessreview",
        )?;
        let allowed = resp["status"]["allowed"].as_bool().unwrap_or(false);
        let reason = resp["status"]["reason"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| if allowed { "allowed".into() } else { format!("{verb} on {} denied", ep.plural) });
        Ok(AccessDecision { allowed, reason })
    }

    fn lifecycle(&self, action: LifecycleAction, target: &ResourceRef, params: &Value) -> Result<Value, KubeError> {
        let kind = target.validate()?;
        let name = name_of(target)?;
        let ns = target.namespace.as_deref();
        let path = path_for(kind, ns, Some(name));
        match action {
            LifecycleAction::Scale => {
                let replicas = params
                    .get("replicas")
                    .and_then(Value::as_i64)
                    .ok_or_else(|| KubeError::InvalidParams("scale requires integer `replicas`".into()))?;
                if replicas < 0 {
                    return Err(KubeError::InvalidParams(format!("replicas must be >= 0, got {replicas}")));
                }
                let obj = self.merge_patch(&path, &json!({"spec": {"replicas": replicas}}))?;
                Ok(normalize(kind, &obj))
            }
            LifecycleAction::Restart if kind == Kind::Pod => {
                let obj = self.get_json(&path, &[])?;
                self.send(self.client.delete(self.url(&path)), "pod")?;
                Ok(normalize(kind, &obj))
            }
            LifecycleAction::Restart => {
                let stamp = chrono::Utc::now().to_rfc3339();
                let patch = json!({"spec": {"template": {"metadata": {"annotations": {
                    "kubectl.kubernetes.io/restartedAt": stamp
                }}}}});
                Ok(normalize(kind, &self.merge_patch(&path, &patch)?))
            }
            LifecycleAction::Cordon | LifecycleAction::Uncordon => {
                let unschedulable = action == LifecycleAction::Cordon;
                let obj = self.merge_patch(&path, &json!({"spec": {"unschedulable": unschedulable}}))?;
                let mut doc = normalize(kind, &obj);
                doc["spec"]["schedulable"] = json!(!unschedulable);
                Ok(doc)
            }
            LifecycleAction::Evict => {
                let obj = self.get_json(&path, &[])?;
                let body = json!({
                    "apiVersion": "policy/v1",
                    "kind": "Eviction",
                    "metadata": {"name": name, "namespace": ns},
                });
                self.send(self.client.post(self.url(&format!("{path}/eviction"))).json(&body), "eviction")?;
                let mut doc = normalize(kind, &obj);
                doc["status"]["phase"] = json!("Evicted");
                Ok(doc)
            }
            LifecycleAction::RolloutStatus => {
                let obj = self.get_json(&path, &[])?;
                let mut doc = normalize(kind, &obj);
                let want = obj["spec"]["replicas"].as_u64().unwrap_or(0);
                let ready = obj["status"]["readyReplicas"].as_u64().unwrap_or(0);
                doc["status"]["rollout_complete"] = json!(want == ready);
                Ok(doc)
            }
        }
    }

    fn apply_manifest(&self, document: &Value) -> Result<Vec<ApplyOutcome>, KubeError> {
        let list: Vec<&Value> = match document {
            Value::Array(v) => v.iter().collect(),
            Value::Object(o) => match o.get("items") {
                Some(Value::Array(v)) => v.iter().collect(),
                _ if o.contains_key("kind") => vec![document],
                _ => Vec::new(),
            },
            _ => Vec::new(),
        };
        if list.is_empty() {
            return Err(KubeError::Validation("manifest contains no resources".into()));
        }
        let mut out = Vec::new();
        for item in list {
            let kind_text = item["kind"].as_str().unwrap_or_default().to_string();
            let namespace = item["namespace"].as_str().map(str::to_string);
            let name = item["name"].as_str().map(str::to_string);
            let mut outcome = ApplyOutcome {
                kind: kind_text.clone(),
                namespace: namespace.clone(),
                name: name.clone(),
                result: ApplyResult::Invalid,
                error: None,
            };
            let target = ResourceRef {
                kind: kind_text,
                namespace,
                name,
                selector: None,
            };
            let result = (|| {
                let exists = !self.read(&target)?.is_empty();
                let mode = if exists { WriteMode::Replace } else { WriteMode::Create };
                self.write(&target, item, mode)?;
                Ok::<_, KubeError>(if exists { ApplyResult::Updated } else { ApplyResult::Created })
            })();
            match result {
                Ok(r) => outcome.result = r,
                Err(e) => outcome.error = Some(e.to_string()),
            }
            out.push(outcome);
        }
        Ok(out)
    }

    fn healthy(&self) -> bool {
        self.get_json("/version", &[]).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths() {
        assert_eq!(path_for(Kind::Pod, Some("demo"), None), "/api/v1/namespaces/demo/pods");
        assert_eq!(path_for(Kind::Pod, None, None), "/api/v1/pods");
        assert_eq!(
            path_for(Kind::Deployment, Some("demo"), Some("api")),
            "/apis/apps/v1/namespaces/demo/deployments/api"
        );
        assert_eq!(path_for(Kind::Role, None, None), "/apis/rbac.authorization.k8s.io/v1/clusterroles");
        assert_eq!(path_for(Kind::Node, Some("x"), Some("n1")), "/api/v1/nodes/n1");
    }

    #[test]
    fn normalizes_api_objects() {
        let pod = json!({
            "metadata": {"name": "p", "namespace": "ns"},
            "spec": {"nodeName": "n1"},
            "status": {"phase": "Running"},
        });
        let doc = normalize(Kind::Pod, &pod);
        assert_eq!(doc["kind"], "pod");
        assert_eq!(doc["status"]["phase"], "Running");
        let secret = json!({"metadata": {"name": "s"}, "data": {"pw": "aHVudGVyMg=="}});
        let doc = normalize(Kind::Secret, &secret);
        assert_eq!(doc["spec"]["data"]["pw"], REDACTED);
    }

    #[test]
    fn wraps_normalized_manifests() {
        let obj = to_api_object(Kind::Deployment, Some("demo"), "api", &json!({"spec": {"replicas": 2}}));
        assert_eq!(obj["apiVersion"], "apps/v1");
        assert_eq!(obj["metadata"]["namespace"], "demo");
        assert_eq!(obj["spec"]["replicas"], 2);
    }
}
