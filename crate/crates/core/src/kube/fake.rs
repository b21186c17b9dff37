//! Deterministic in-memory backend.

use std::time::{Duration, Instant};

use chrono::Utc;
use parking_lot::{Condvar, Mutex, RwLock};
use serde_json::{json, Value};

use super::model::{self, Apply, ClusterModel, Event, Filter, ObjKey, PodPhase};
use super::{
    AccessDecision, ApplyOutcome, ApplyResult, ClusterBackend, EventBatch, ExecOutput, Kind, KubeError,
    LifecycleAction, ResourceRef, VerbCategory, WriteMode,
};

/// Single-writer, many-reader wrapper over a [`ClusterModel`].
pub struct FakeCluster {
    name: String,
    model: RwLock<ClusterModel>,
    /// Bumped on every event append; watchers wait on the condvar.
    event_seq: Mutex<u64>,
    event_signal: Condvar,
}

impl std::fmt::Debug for FakeCluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FakeCluster").field("name", &self.name).finish_non_exhaustive()
    }
}

impl FakeCluster {
    pub fn new(name: impl Into<String>, model: ClusterModel) -> Self {
        Self {
            name: name.into(),
            model: RwLock::new(model),
            event_seq: Mutex::new(0),
            event_signal: Condvar::new(),
        }
    }

    /// Copy of the current model.
    pub fn model(&self) -> ClusterModel {
        self.model.read().clone()
    }

    /// Runs `f` against a consistent read view.
    pub fn with_model<R>(&self, f: impl FnOnce(&ClusterModel) -> R) -> R {
        f(&self.model.read())
    }

    /// Replaces the whole model (fixture reseed).
    pub fn reset(&self, model: ClusterModel) {
        *self.model.write() = model;
        self.notify();
    }

    /// Appends an event and wakes pending watchers.
    pub fn inject_event(
        &self,
        namespace: &str,
        reason: &str,
        message: &str,
        involved_object: &str,
    ) {
        self.model.write().push_event(Event {
            namespace: namespace.to_string(),
            event_type: "Normal".to_string(),
            reason: reason.to_string(),
            message: message.to_string(),
            involved_object: involved_object.to_string(),
            timestamp: Utc::now(),
        });
        self.notify();
    }

    fn notify(&self) {
        let mut seq = self.event_seq.lock();
        *seq += 1;
        self.event_signal.notify_all();
    }

    fn collect_events(&self, namespace: Option<&str>, cursor: u64, max_items: usize) -> (Vec<Value>, u64) {
        let m = self.model.read();
        let start = (cursor as usize).min(m.events.len());
        let mut out = Vec::new();
        let mut next = m.events.len() as u64;
        for (i, e) in m.events.iter().enumerate().skip(start) {
            if namespace.is_some_and(|ns| ns != e.namespace) {
                continue;
            }
            if out.len() == max_items {
                next = i as u64;
                break;
            }
            out.push(model::event_doc(i, e));
        }
        (out, next)
    }
}

fn target_key(kind: Kind, target: &ResourceRef) -> Result<(ObjKey, String), KubeError> {
    let name = target
        .name
        .clone()
        .filter(|n| !n.is_empty())
        .ok_or_else(|| KubeError::Validation(format!("{kind} operation requires a name")))?;
    let ns = if kind.is_namespaced() {
        target.namespace.clone().unwrap_or_default()
    } else {
        String::new()
    };
    Ok((ObjKey::new(ns, name.clone()), name))
}

fn ns_param(target: &ResourceRef) -> Option<&str> {
    target.namespace.as_deref().filter(|n| !n.is_empty())
}

impl ClusterBackend for FakeCluster {
    fn name(&self) -> &str {
        &self.name
    }

    fn read(&self, target: &ResourceRef) -> Result<Vec<Value>, KubeError> {
        let kind = target.validate()?;
        let filter = Filter {
            namespace: ns_param(target),
            name: target.name.as_deref(),
            selector: target.selector.as_ref(),
        };
        Ok(self.model.read().documents(kind, &filter))
    }

    fn get_logs(&self, namespace: &str, pod: &str, tail: Option<usize>) -> Result<String, KubeError> {
        let m = self.model.read();
        let p = m
            .pods
            .get(&ObjKey::new(namespace, pod))
            .ok_or_else(|| KubeError::not_found(Kind::Pod, Some(namespace), pod))?;
        Ok(match tail {
            None => p.log_text.clone(),
            Some(n) => {
                let lines: Vec<&str> = p.log_text.lines().collect();
                lines[lines.len().saturating_sub(n)..].join("\n")
            }
        })
    }

    fn watch_events(
        &self,
        namespace: Option<&str>,
        cursor: u64,
        max_items: usize,
        max_wait: Duration,
    ) -> Result<EventBatch, KubeError> {
        let deadline = Instant::now() + max_wait;
        loop {
            let seen = *self.event_seq.lock();
            let (events, next) = self.collect_events(namespace, cursor, max_items);
            if !events.is_empty() || max_items == 0 {
                return Ok(EventBatch { events, cursor: next });
            }
            let mut seq = self.event_seq.lock();
            if *seq == seen {
                let timed_out = self.event_signal.wait_until(&mut seq, deadline).timed_out();
                if timed_out {
                    drop(seq);
                    let (events, next) = self.collect_events(namespace, cursor, max_items);
                    return Ok(EventBatch { events, cursor: next });
                }
            }
            if Instant::now() >= deadline {
                drop(seq);
                let (events, next) = self.collect_events(namespace, cursor, max_items);
                return Ok(EventBatch { events, cursor: next });
            }
        }
    }

    fn write(&self, target: &ResourceRef, manifest: &Value, mode: WriteMode) -> Result<Value, KubeError> {
        let kind = target.validate()?;
        let name = target
            .name
            .clone()
            .or_else(|| manifest.get("name").and_then(Value::as_str).map(str::to_string))
            .ok_or_else(|| KubeError::Validation("write requires a resource name".into()))?;
        let how = match mode {
            WriteMode::Create => Apply::Create,
            WriteMode::Update | WriteMode::Replace => Apply::Replace,
            WriteMode::Patch => Apply::Patch,
        };
        let mut m = self.model.write();
        // Work on a copy so a failed write leaves no partial state.
        let mut next = m.clone();
        let doc = next.write_object(kind, ns_param(target), &name, manifest, how)?;
        next.check_integrity()?;
        *m = next;
        Ok(doc)
    }

    fn delete(&self, target: &ResourceRef, collection: bool) -> Result<usize, KubeError> {
        let kind = target.validate()?;
        if matches!(kind, Kind::Event | Kind::PodMetrics | Kind::NodeMetrics | Kind::Node) {
            return Err(KubeError::Validation(format!("{kind} objects cannot be deleted")));
        }
        let mut m = self.model.write();
        if !collection {
            let (key, name) = target_key(kind, target)?;
            if !m.contains(kind, &key) {
                return Err(KubeError::not_found(kind, ns_param(target), &name));
            }
            return Ok(remove_one(&mut m, kind, &key));
        }
        let filter = Filter {
            namespace: ns_param(target),
            name: target.name.as_deref(),
            selector: target.selector.as_ref(),
        };
        let victims: Vec<ObjKey> = m
            .documents(kind, &filter)
            .iter()
            .map(|d| {
                ObjKey::new(
                    d["namespace"].as_str().unwrap_or_default(),
                    d["name"].as_str().unwrap_or_default(),
                )
            })
            .collect();
        let mut count = 0;
        for key in victims {
            // A cascading delete may already have taken this one.
            if m.contains(kind, &key) {
                remove_one(&mut m, kind, &key);
                count += 1;
            }
        }
        Ok(count)
    }

    fn exec_in_pod(&self, namespace: &str, pod: &str, command: &[String]) -> Result<ExecOutput, KubeError> {
        let m = self.model.read();
        let p = m
            .pods
            .get(&ObjKey::new(namespace, pod))
            .ok_or_else(|| KubeError::not_found(Kind::Pod, Some(namespace), pod))?;
        if p.phase != PodPhase::Running {
            return Err(KubeError::PodNotRunning(pod.to_string()));
        }
        let line = command.join(" ");
        let rule = m.exec_table.iter().find(|r| {
            r.command == line
                && r.namespace.as_deref().is_none_or(|n| n == namespace)
                && r.pod.as_deref().is_none_or(|n| n == pod)
        });
        let fill = |s: &str| s.replace("{pod}", pod).replace("{namespace}", namespace);
        Ok(match rule {
            Some(r) => ExecOutput {
                exit_code: r.exit_code,
                stdout: fill(&r.stdout),
                stderr: fill(&r.stderr),
            },
            None => ExecOutput {
                exit_code: 127,
                stdout: String::new(),
                stderr: format!("{}: command not found\n", command.first().map_or("", String::as_str)),
            },
        })
    }

    fn access_review(
        &self,
        subject: &str,
        category: VerbCategory,
        target: &ResourceRef,
    ) -> Result<AccessDecision, KubeError> {
        let kind = target.validate()?;
        let m = self.model.read();
        let known = m.rolebindings.values().any(|b| b.subjects.iter().any(|s| s == subject))
            || m.serviceaccounts
                .iter()
                .any(|k| subject == format!("system:serviceaccount:{}:{}", k.namespace, k.name));
        if !known {
            return Err(KubeError::UnknownSubject(subject.to_string()));
        }
        let scope = ns_param(target);
        for (bkey, binding) in &m.rolebindings {
            if !binding.subjects.iter().any(|s| s == subject) {
                continue;
            }
            // Namespaced bindings only apply inside their namespace.
            let in_scope = bkey.namespace.is_empty() || scope == Some(bkey.namespace.as_str());
            if !in_scope {
                continue;
            }
            let role = m
                .roles
                .get(&ObjKey::new(&bkey.namespace, &binding.role))
                .or_else(|| m.roles.get(&ObjKey::new("", &binding.role)));
            let Some(role) = role else { continue };
            if role.rules.iter().any(|r| r.grants(category, kind.as_str())) {
                let where_ = if bkey.namespace.is_empty() {
                    "cluster-wide".to_string()
                } else {
                    format!("in namespace {}", bkey.namespace)
                };
                return Ok(AccessDecision {
                    allowed: true,
                    reason: format!(
                        "granted by binding {} ({where_}) to role {}",
                        bkey.name, binding.role
                    ),
                });
            }
        }
        Ok(AccessDecision {
            allowed: false,
            reason: format!(
                "no binding grants {category} on {kind}{} to {subject}",
                scope.map(|s| format!(" in namespace {s}")).unwrap_or_default()
            ),
        })
    }

    fn lifecycle(&self, action: LifecycleAction, target: &ResourceRef, params: &Value) -> Result<Value, KubeError> {
        let kind = target.validate()?;
        let (key, name) = target_key(kind, target)?;
        let mut m = self.model.write();
        let not_found = || KubeError::not_found(kind, ns_param(target), &name);
        let wrong_kind = |want: &str| KubeError::InvalidParams(format!("{action:?} applies to {want}, not {kind}"));
        let doc = match action {
            LifecycleAction::Scale => {
                if kind != Kind::Deployment {
                    return Err(wrong_kind("deployments"));
                }
                let replicas = params
                    .get("replicas")
                    .and_then(Value::as_i64)
                    .ok_or_else(|| KubeError::InvalidParams("scale requires integer `replicas`".into()))?;
                if replicas < 0 {
                    return Err(KubeError::InvalidParams(format!("replicas must be >= 0, got {replicas}")));
                }
                let replicas = u32::try_from(replicas)
                    .map_err(|_| KubeError::InvalidParams(format!("replicas too large: {replicas}")))?;
                m.deployments.get_mut(&key).ok_or_else(not_found)?.replicas = replicas;
                m.reconcile(&key);
                model::deployment_doc(&key, &m.deployments[&key])
            }
            LifecycleAction::Restart => match kind {
                Kind::Pod => {
                    let pod = m.pods.get_mut(&key).ok_or_else(not_found)?;
                    pod.restart_count += 1;
                    pod.phase = PodPhase::Running;
                    model::pod_doc(&key, pod)
                }
                Kind::Deployment => {
                    if !m.deployments.contains_key(&key) {
                        return Err(not_found());
                    }
                    for (pk, pod) in m.pods.iter_mut() {
                        if pk.namespace == key.namespace && pod.owner.as_deref() == Some(&name) {
                            pod.restart_count += 1;
                            pod.phase = PodPhase::Running;
                        }
                    }
                    model::deployment_doc(&key, &m.deployments[&key])
                }
                _ => return Err(wrong_kind("pods or deployments")),
            },
            LifecycleAction::Cordon | LifecycleAction::Uncordon => {
                if kind != Kind::Node {
                    return Err(wrong_kind("nodes"));
                }
                let node = m.nodes.get_mut(&name).ok_or_else(not_found)?;
                node.schedulable = action == LifecycleAction::Uncordon;
                model::node_doc(&name, node)
            }
            LifecycleAction::Evict => {
                if kind != Kind::Pod {
                    return Err(wrong_kind("pods"));
                }
                let pod = m.pods.get(&key).cloned().ok_or_else(not_found)?;
                m.remove_pod(&key);
                m.push_event(Event {
                    namespace: key.namespace.clone(),
                    event_type: "Normal".into(),
                    reason: "Evicted".into(),
                    message: format!("pod {name} evicted"),
                    involved_object: format!("pod/{name}"),
                    timestamp: Utc::now(),
                });
                let mut doc = model::pod_doc(&key, &pod);
                doc["status"]["phase"] = json!("Evicted");
                drop(m);
                self.notify();
                return Ok(doc);
            }
            LifecycleAction::RolloutStatus => {
                if kind != Kind::Deployment {
                    return Err(wrong_kind("deployments"));
                }
                let dep = m.deployments.get(&key).ok_or_else(not_found)?;
                let mut doc = model::deployment_doc(&key, dep);
                doc["status"]["rollout_complete"] = json!(dep.ready_replicas == dep.replicas);
                doc
            }
        };
        Ok(doc)
    }

    fn apply_manifest(&self, document: &Value) -> Result<Vec<ApplyOutcome>, KubeError> {
        let items: Vec<&Value> = match document {
            Value::Array(items) => items.iter().collect(),
            Value::Object(o) => match o.get("items") {
                Some(Value::Array(items)) => items.iter().collect(),
                _ if o.contains_key("kind") => vec![document],
                _ => Vec::new(),
            },
            _ => Vec::new(),
        };
        if items.is_empty() {
            return Err(KubeError::Validation("manifest contains no resources".into()));
        }
        let mut m = self.model.write();
        let mut outcomes = Vec::with_capacity(items.len());
        for item in items {
            let kind_text = item.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
            let namespace = item.get("namespace").and_then(Value::as_str).map(str::to_string);
            let name = item.get("name").and_then(Value::as_str).map(str::to_string);
            let mut outcome = ApplyOutcome {
                kind: kind_text.clone(),
                namespace: namespace.clone(),
                name: name.clone(),
                result: ApplyResult::Invalid,
                error: None,
            };
            let attempt = (|| -> Result<ApplyResult, KubeError> {
                let kind = Kind::parse(&kind_text)?;
                let name = name.clone().ok_or_else(|| KubeError::Validation("missing name".into()))?;
                let key = ObjKey::new(
                    if kind.is_namespaced() { namespace.clone().unwrap_or_default() } else { String::new() },
                    name.clone(),
                );
                let mut next = m.clone();
                let (result, how) = if next.contains(kind, &key) {
                    (ApplyResult::Updated, Apply::Replace)
                } else {
                    (ApplyResult::Created, Apply::Create)
                };
                next.write_object(kind, namespace.as_deref(), &name, item, how)?;
                next.check_integrity()?;
                if next == *m {
                    return Ok(ApplyResult::Unchanged);
                }
                *m = next;
                Ok(result)
            })();
            match attempt {
                Ok(r) => outcome.result = r,
                Err(e) => outcome.error = Some(e.to_string()),
            }
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}

fn remove_one(m: &mut ClusterModel, kind: Kind, key: &ObjKey) -> usize {
    match kind {
        Kind::Namespace => m.remove_namespace(&key.name).min(1),
        Kind::Deployment => m.remove_deployment(key).min(1),
        Kind::Pod => usize::from(m.remove_pod(key)),
        Kind::Service => usize::from(m.services.remove(key).is_some()),
        Kind::ConfigMap => usize::from(m.configmaps.remove(key).is_some()),
        Kind::Secret => usize::from(m.secrets.remove(key).is_some()),
        Kind::Job => usize::from(m.jobs.remove(key).is_some()),
        Kind::Role => usize::from(m.roles.remove(key).is_some()),
        Kind::RoleBinding => usize::from(m.rolebindings.remove(key).is_some()),
        Kind::ServiceAccount => usize::from(m.serviceaccounts.remove(key)),
        Kind::Event | Kind::Node | Kind::PodMetrics | Kind::NodeMetrics => 0,
    }
}
