//! In-memory cluster state and its normalized document rendering.
//!
//! The model is plain data. All mutation goes through the functions here so
//! referential integrity holds after every operation: no pod, deployment or
//! service outlives its namespace, and no pod names a missing owner.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{KubeError, Kind, Labels, VerbCategory};

pub const REDACTED: &str = "<redacted>";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjKey {
    pub namespace: String,
    pub name: String,
}

impl ObjKey {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PodPhase {
    Running,
    Pending,
    Failed,
    CrashLoopBackOff,
    Succeeded,
}

impl PodPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            PodPhase::Running => "Running",
            PodPhase::Pending => "Pending",
            PodPhase::Failed => "Failed",
            PodPhase::CrashLoopBackOff => "CrashLoopBackOff",
            PodPhase::Succeeded => "Succeeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pod {
    pub containers: Vec<String>,
    pub phase: PodPhase,
    #[serde(default)]
    pub log_text: String,
    #[serde(default)]
    pub restart_count: u32,
    #[serde(default)]
    pub labels: Labels,
    /// Name of the owning deployment in the same namespace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub replicas: u32,
    #[serde(default)]
    pub ready_replicas: u32,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub image: String,
    #[serde(default)]
    pub labels: Labels,
}

fn default_strategy() -> String {
    "RollingUpdate".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    #[serde(rename = "type", default = "default_service_type")]
    pub service_type: String,
    #[serde(default)]
    pub ports: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_ip: Option<String>,
    #[serde(default)]
    pub selector: Labels,
}

fn default_service_type() -> String {
    "ClusterIP".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub state: JobState,
    #[serde(default = "one")]
    pub completions: u32,
    #[serde(default)]
    pub succeeded: u32,
    #[serde(default)]
    pub failed: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub categories: BTreeSet<VerbCategory>,
    /// Kind names or `*`.
    pub kinds: BTreeSet<String>,
}

impl PolicyRule {
    pub fn grants(&self, category: VerbCategory, kind: &str) -> bool {
        self.categories.contains(&category) && (self.kinds.contains("*") || self.kinds.contains(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub rules: Vec<PolicyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub role: String,
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Empty for cluster-scoped events.
    #[serde(default)]
    pub namespace: String,
    #[serde(rename = "type", default = "normal")]
    pub event_type: String,
    pub reason: String,
    pub message: String,
    pub involved_object: String,
    pub timestamp: DateTime<Utc>,
}

fn normal() -> String {
    "Normal".to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSample {
    pub cpu_millicores: u64,
    pub memory_mib: u64,
    #[serde(default)]
    pub net_rx_bytes: u64,
    #[serde(default)]
    pub net_tx_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCapacity {
    pub cpu_millicores: u64,
    pub memory_mib: u64,
    pub pods: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub schedulable: bool,
    pub capacity: NodeCapacity,
}

/// Scripted response for `exec_in_pod`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRule {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pod: Option<String>,
    #[serde(default)]
    pub exit_code: i32,
    /// `{pod}` and `{namespace}` are substituted.
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FixtureDoc", into = "FixtureDoc")]
pub struct ClusterModel {
    pub namespaces: BTreeSet<String>,
    pub pods: BTreeMap<ObjKey, Pod>,
    pub deployments: BTreeMap<ObjKey, Deployment>,
    pub services: BTreeMap<ObjKey, Service>,
    pub configmaps: BTreeMap<ObjKey, BTreeMap<String, String>>,
    pub secrets: BTreeMap<ObjKey, BTreeMap<String, String>>,
    pub jobs: BTreeMap<ObjKey, Job>,
    /// Cluster-scoped roles use an empty namespace.
    pub roles: BTreeMap<ObjKey, Role>,
    /// Cluster-wide bindings use an empty namespace.
    pub rolebindings: BTreeMap<ObjKey, RoleBinding>,
    pub serviceaccounts: BTreeSet<ObjKey>,
    pub events: Vec<Event>,
    /// Pod metrics keyed by pod; node metrics keyed by node name.
    pub pod_metrics: BTreeMap<ObjKey, MetricSample>,
    pub node_metrics: BTreeMap<String, MetricSample>,
    pub nodes: BTreeMap<String, Node>,
    pub exec_table: Vec<ExecRule>,
}

// ---------------------------------------------------------------------------
// Fixture document form

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Named<T> {
    #[serde(default)]
    namespace: String,
    name: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DataRecord {
    #[serde(default)]
    data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Empty {}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureDoc {
    #[serde(default)]
    namespaces: Vec<String>,
    #[serde(default)]
    nodes: Vec<Named<Node>>,
    #[serde(default)]
    pods: Vec<Named<Pod>>,
    #[serde(default)]
    deployments: Vec<Named<Deployment>>,
    #[serde(default)]
    services: Vec<Named<Service>>,
    #[serde(default)]
    configmaps: Vec<Named<DataRecord>>,
    #[serde(default)]
    secrets: Vec<Named<DataRecord>>,
    #[serde(default)]
    jobs: Vec<Named<Job>>,
    #[serde(default)]
    roles: Vec<Named<Role>>,
    #[serde(default)]
    rolebindings: Vec<Named<RoleBinding>>,
    #[serde(default)]
    serviceaccounts: Vec<Named<Empty>>,
    #[serde(default)]
    events: Vec<Event>,
    #[serde(default)]
    pod_metrics: Vec<Named<MetricSample>>,
    #[serde(default)]
    node_metrics: Vec<Named<MetricSample>>,
    #[serde(default)]
    exec: Vec<ExecRule>,
}

fn insert_unique<T>(
    map: &mut BTreeMap<ObjKey, T>,
    kind: Kind,
    rec: Named<T>,
) -> Result<(), KubeError> {
    let key = ObjKey::new(rec.namespace, rec.name);
    if map.contains_key(&key) {
        return Err(KubeError::Validation(format!(
            "duplicate {kind} {}/{}",
            key.namespace, key.name
        )));
    }
    map.insert(key, rec.body);
    Ok(())
}

impl TryFrom<FixtureDoc> for ClusterModel {
    type Error = KubeError;

    fn try_from(doc: FixtureDoc) -> Result<Self, KubeError> {
        let mut m = ClusterModel::default();
        for ns in doc.namespaces {
            if !m.namespaces.insert(ns.clone()) {
                return Err(KubeError::Validation(format!("duplicate namespace {ns}")));
            }
        }
        for n in doc.nodes {
            if m.nodes.insert(n.name.clone(), n.body).is_some() {
                return Err(KubeError::Validation(format!("duplicate node {}", n.name)));
            }
        }
        for r in doc.pods {
            insert_unique(&mut m.pods, Kind::Pod, r)?;
        }
        for r in doc.deployments {
            insert_unique(&mut m.deployments, Kind::Deployment, r)?;
        }
        for r in doc.services {
            insert_unique(&mut m.services, Kind::Service, r)?;
        }
        for r in doc.configmaps {
            let r = Named { namespace: r.namespace, name: r.name, body: r.body.data };
            insert_unique(&mut m.configmaps, Kind::ConfigMap, r)?;
        }
        for r in doc.secrets {
            let r = Named { namespace: r.namespace, name: r.name, body: r.body.data };
            insert_unique(&mut m.secrets, Kind::Secret, r)?;
        }
        for r in doc.jobs {
            insert_unique(&mut m.jobs, Kind::Job, r)?;
        }
        for r in doc.roles {
            insert_unique(&mut m.roles, Kind::Role, r)?;
        }
        for r in doc.rolebindings {
            insert_unique(&mut m.rolebindings, Kind::RoleBinding, r)?;
        }
        for r in doc.serviceaccounts {
            m.serviceaccounts.insert(ObjKey::new(r.namespace, r.name));
        }
        m.events = doc.events;
        for r in doc.pod_metrics {
            insert_unique(&mut m.pod_metrics, Kind::PodMetrics, r)?;
        }
        for r in doc.node_metrics {
            m.node_metrics.insert(r.name, r.body);
        }
        m.exec_table = doc.exec;
        m.check_integrity()?;
        Ok(m)
    }
}

fn named<T: Clone>(map: &BTreeMap<ObjKey, T>) -> Vec<Named<T>> {
    map.iter()
        .map(|(k, v)| Named {
            namespace: k.namespace.clone(),
            name: k.name.clone(),
            body: v.clone(),
        })
        .collect()
}

impl From<ClusterModel> for FixtureDoc {
    fn from(m: ClusterModel) -> Self {
        let data = |map: &BTreeMap<ObjKey, BTreeMap<String, String>>| {
            map.iter()
                .map(|(k, v)| Named {
                    namespace: k.namespace.clone(),
                    name: k.name.clone(),
                    body: DataRecord { data: v.clone() },
                })
                .collect()
        };
        FixtureDoc {
            namespaces: m.namespaces.iter().cloned().collect(),
            nodes: m
                .nodes
                .iter()
                .map(|(n, v)| Named { namespace: String::new(), name: n.clone(), body: v.clone() })
                .collect(),
            pods: named(&m.pods),
            deployments: named(&m.deployments),
            services: named(&m.services),
            configmaps: data(&m.configmaps),
            secrets: data(&m.secrets),
            jobs: named(&m.jobs),
            roles: named(&m.roles),
            rolebindings: named(&m.rolebindings),
            serviceaccounts: m
                .serviceaccounts
                .iter()
                .map(|k| Named { namespace: k.namespace.clone(), name: k.name.clone(), body: Empty {} })
                .collect(),
            events: m.events.clone(),
            pod_metrics: named(&m.pod_metrics),
            node_metrics: m
                .node_metrics
                .iter()
                .map(|(n, v)| Named { namespace: String::new(), name: n.clone(), body: *v })
                .collect(),
            exec: m.exec_table.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Integrity

impl ClusterModel {
    pub fn from_toml(text: &str) -> Result<Self, KubeError> {
        toml::from_str(text).map_err(|e| KubeError::Validation(format!("fixture: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Verifies the structural invariants; every mutation preserves them.
    pub fn check_integrity(&self) -> Result<(), KubeError> {
        let ns_ok = |kind: Kind, k: &ObjKey| {
            if self.namespaces.contains(&k.namespace) {
                Ok(())
            } else {
                Err(KubeError::Validation(format!(
                    "{kind} {}/{} references missing namespace",
                    k.namespace, k.name
                )))
            }
        };
        for k in self.pods.keys() {
            ns_ok(Kind::Pod, k)?;
        }
        for k in self.deployments.keys() {
            ns_ok(Kind::Deployment, k)?;
        }
        for k in self.services.keys() {
            ns_ok(Kind::Service, k)?;
        }
        for k in self
            .configmaps
            .keys()
            .chain(self.secrets.keys())
            .chain(self.jobs.keys())
            .chain(self.serviceaccounts.iter())
            .chain(self.pod_metrics.keys())
        {
            ns_ok(Kind::ConfigMap, k)?;
        }
        for k in self.roles.keys().chain(self.rolebindings.keys()) {
            if !k.namespace.is_empty() {
                ns_ok(Kind::Role, k)?;
            }
        }
        for (k, pod) in &self.pods {
            if let Some(owner) = &pod.owner {
                if !self.deployments.contains_key(&ObjKey::new(&k.namespace, owner)) {
                    return Err(KubeError::Validation(format!(
                        "pod {}/{} owned by missing deployment {owner}",
                        k.namespace, k.name
                    )));
                }
            }
            if let Some(node) = &pod.node {
                if !self.nodes.contains_key(node) {
                    return Err(KubeError::Validation(format!(
                        "pod {}/{} scheduled on missing node {node}",
                        k.namespace, k.name
                    )));
                }
            }
        }
        for pair in self.events.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(KubeError::Validation("event timestamps decrease".into()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == ClusterModel::default()
    }

    /// Total number of stored objects, events included.
    pub fn resource_count(&self) -> usize {
        self.namespaces.len()
            + self.pods.len()
            + self.deployments.len()
            + self.services.len()
            + self.configmaps.len()
            + self.secrets.len()
            + self.jobs.len()
            + self.roles.len()
            + self.rolebindings.len()
            + self.serviceaccounts.len()
            + self.events.len()
            + self.nodes.len()
    }

    pub fn require_namespace(&self, ns: &str) -> Result<(), KubeError> {
        if self.namespaces.contains(ns) {
            Ok(())
        } else {
            Err(KubeError::not_found(Kind::Namespace, None, ns))
        }
    }

    /// Appends an event, clamping its timestamp so the log stays ordered.
    pub fn push_event(&mut self, mut event: Event) {
        if let Some(last) = self.events.last() {
            if event.timestamp < last.timestamp {
                event.timestamp = last.timestamp;
            }
        }
        self.events.push(event);
    }

    /// Brings the pods owned by a deployment in line with its replica count.
    /// Pods are named `{deployment}-{index}`.
    pub fn reconcile(&mut self, key: &ObjKey) {
        let Some(dep) = self.deployments.get(key).cloned() else {
            return;
        };
        let owned: Vec<ObjKey> = self
            .pods
            .iter()
            .filter(|(k, p)| k.namespace == key.namespace && p.owner.as_deref() == Some(&key.name))
            .map(|(k, _)| k.clone())
            .collect();
        let want = dep.replicas as usize;
        if owned.len() > want {
            let excess = owned.len() - want;
            let mut by_index = owned;
            by_index.sort_by_key(|k| std::cmp::Reverse(pod_ordinal(&k.name)));
            for k in by_index.into_iter().take(excess) {
                self.pods.remove(&k);
                self.pod_metrics.remove(&k);
            }
        } else {
            let schedulable: Vec<String> = self
                .nodes
                .iter()
                .filter(|(_, n)| n.schedulable)
                .map(|(n, _)| n.clone())
                .collect();
            let mut missing = want - owned.len();
            let mut i = 0usize;
            while missing > 0 {
                let name = format!("{}-{i}", key.name);
                let pk = ObjKey::new(&key.namespace, &name);
                if !self.pods.contains_key(&pk) {
                    let node = if schedulable.is_empty() {
                        None
                    } else {
                        Some(schedulable[i % schedulable.len()].clone())
                    };
                    self.pods.insert(
                        pk.clone(),
                        Pod {
                            containers: vec![key.name.clone()],
                            phase: PodPhase::Running,
                            log_text: String::new(),
                            restart_count: 0,
                            labels: dep.labels.clone(),
                            owner: Some(key.name.clone()),
                            node,
                        },
                    );
                    self.pod_metrics.insert(pk, MetricSample::default());
                    missing -= 1;
                }
                i += 1;
            }
        }
        if let Some(d) = self.deployments.get_mut(key) {
            d.ready_replicas = d.replicas;
        }
    }

    /// Removes a namespace and everything inside it. Returns removed object count
    /// (the namespace itself included).
    pub fn remove_namespace(&mut self, ns: &str) -> usize {
        if !self.namespaces.remove(ns) {
            return 0;
        }
        fn drain<T>(map: &mut BTreeMap<ObjKey, T>, ns: &str) -> usize {
            let before = map.len();
            map.retain(|k, _| k.namespace != ns);
            before - map.len()
        }
        let mut n = 1;
        n += drain(&mut self.pods, ns);
        n += drain(&mut self.deployments, ns);
        n += drain(&mut self.services, ns);
        n += drain(&mut self.configmaps, ns);
        n += drain(&mut self.secrets, ns);
        n += drain(&mut self.jobs, ns);
        n += drain(&mut self.roles, ns);
        n += drain(&mut self.rolebindings, ns);
        drain(&mut self.pod_metrics, ns);
        let before = self.serviceaccounts.len();
        self.serviceaccounts.retain(|k| k.namespace != ns);
        n += before - self.serviceaccounts.len();
        n
    }

    /// Removes a deployment and the pods it owns. Returns the number removed.
    pub fn remove_deployment(&mut self, key: &ObjKey) -> usize {
        if self.deployments.remove(key).is_none() {
            return 0;
        }
        let owned: Vec<ObjKey> = self
            .pods
            .iter()
            .filter(|(k, p)| k.namespace == key.namespace && p.owner.as_deref() == Some(&key.name))
            .map(|(k, _)| k.clone())
            .collect();
        for k in &owned {
            self.pods.remove(k);
            self.pod_metrics.remove(k);
        }
        1 + owned.len()
    }

    pub fn remove_pod(&mut self, key: &ObjKey) -> bool {
        self.pod_metrics.remove(key);
        self.pods.remove(key).is_some()
    }
}

fn pod_ordinal(name: &str) -> u64 {
    name.rsplit('-')
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(u64::MAX)
}

// ---------------------------------------------------------------------------
// Normalized documents

pub fn document(kind: Kind, namespace: Option<&str>, name: &str, spec: Value, status: Value) -> Value {
    json!({
        "kind": kind.as_str(),
        "namespace": namespace,
        "name": name,
        "spec": spec,
        "status": status,
    })
}

fn ns_opt(ns: &str) -> Option<&str> {
    (!ns.is_empty()).then_some(ns)
}

pub fn namespace_doc(name: &str) -> Value {
    document(Kind::Namespace, None, name, json!({}), json!({"phase": "Active"}))
}

pub fn pod_doc(k: &ObjKey, p: &Pod) -> Value {
    document(
        Kind::Pod,
        Some(&k.namespace),
        &k.name,
        json!({
            "containers": p.containers,
            "labels": p.labels,
            "owner": p.owner,
            "node": p.node,
        }),
        json!({"phase": p.phase.as_str(), "restart_count": p.restart_count}),
    )
}

pub fn deployment_doc(k: &ObjKey, d: &Deployment) -> Value {
    document(
        Kind::Deployment,
        Some(&k.namespace),
        &k.name,
        json!({
            "replicas": d.replicas,
            "strategy": d.strategy,
            "image": d.image,
            "labels": d.labels,
        }),
        json!({"ready_replicas": d.ready_replicas}),
    )
}

pub fn service_doc(k: &ObjKey, s: &Service) -> Value {
    document(
        Kind::Service,
        Some(&k.namespace),
        &k.name,
        json!({"type": s.service_type, "ports": s.ports, "selector": s.selector}),
        json!({"external_ip": s.external_ip}),
    )
}

pub fn configmap_doc(k: &ObjKey, data: &BTreeMap<String, String>) -> Value {
    document(Kind::ConfigMap, Some(&k.namespace), &k.name, json!({"data": data}), json!({}))
}

/// Secret values never leave the model.
pub fn secret_doc(k: &ObjKey, data: &BTreeMap<String, String>) -> Value {
    let redacted: BTreeMap<&str, &str> = data.keys().map(|key| (key.as_str(), REDACTED)).collect();
    document(Kind::Secret, Some(&k.namespace), &k.name, json!({"data": redacted}), json!({}))
}

pub fn job_doc(k: &ObjKey, j: &Job) -> Value {
    let state = match j.state {
        JobState::Running => "Running",
        JobState::Complete => "Complete",
        JobState::Failed => "Failed",
    };
    document(
        Kind::Job,
        Some(&k.namespace),
        &k.name,
        json!({"completions": j.completions}),
        json!({"state": state, "succeeded": j.succeeded, "failed": j.failed}),
    )
}

pub fn role_doc(k: &ObjKey, r: &Role) -> Value {
    document(Kind::Role, ns_opt(&k.namespace), &k.name, json!({"rules": r.rules}), json!({}))
}

pub fn rolebinding_doc(k: &ObjKey, b: &RoleBinding) -> Value {
    document(
        Kind::RoleBinding,
        ns_opt(&k.namespace),
        &k.name,
        json!({"role": b.role, "subjects": b.subjects}),
        json!({}),
    )
}

pub fn serviceaccount_doc(k: &ObjKey) -> Value {
    document(Kind::ServiceAccount, Some(&k.namespace), &k.name, json!({}), json!({}))
}

pub fn event_doc(index: usize, e: &Event) -> Value {
    document(
        Kind::Event,
        ns_opt(&e.namespace),
        &format!("event-{index}"),
        json!({
            "type": e.event_type,
            "reason": e.reason,
            "message": e.message,
            "involved_object": e.involved_object,
        }),
        json!({"timestamp": e.timestamp.to_rfc3339()}),
    )
}

pub fn node_doc(name: &str, n: &Node) -> Value {
    document(
        Kind::Node,
        None,
        name,
        json!({"schedulable": n.schedulable}),
        json!({"capacity": n.capacity}),
    )
}

pub fn metrics_doc(kind: Kind, namespace: Option<&str>, name: &str, m: &MetricSample) -> Value {
    document(kind, namespace, name, json!({}), serde_json::to_value(m).unwrap_or_default())
}

fn labels_match(labels: &Labels, selector: Option<&Labels>) -> bool {
    selector.is_none_or(|sel| sel.iter().all(|(k, v)| labels.get(k) == Some(v)))
}

/// Filter applied by every read: namespace (None = all), name, selector.
pub struct Filter<'a> {
    pub namespace: Option<&'a str>,
    pub name: Option<&'a str>,
    pub selector: Option<&'a Labels>,
}

impl Filter<'_> {
    fn keeps(&self, k: &ObjKey) -> bool {
        self.namespace.is_none_or(|ns| ns == k.namespace) && self.name.is_none_or(|n| n == k.name)
    }

    fn keeps_cluster(&self, name: &str) -> bool {
        self.name.is_none_or(|n| n == name)
    }
}

impl ClusterModel {
    /// Renders all objects of `kind` passing the filter, ordered by (namespace, name).
    pub fn documents(&self, kind: Kind, f: &Filter<'_>) -> Vec<Value> {
        let sel = f.selector;
        match kind {
            Kind::Namespace => self
                .namespaces
                .iter()
                .filter(|n| f.keeps_cluster(n) && sel.is_none())
                .map(|n| namespace_doc(n))
                .collect(),
            Kind::Pod => self
                .pods
                .iter()
                .filter(|(k, p)| f.keeps(k) && labels_match(&p.labels, sel))
                .map(|(k, p)| pod_doc(k, p))
                .collect(),
            Kind::Deployment => self
                .deployments
                .iter()
                .filter(|(k, d)| f.keeps(k) && labels_match(&d.labels, sel))
                .map(|(k, d)| deployment_doc(k, d))
                .collect(),
            Kind::Service => self
                .services
                .iter()
                .filter(|(k, s)| f.keeps(k) && labels_match(&s.selector, sel))
                .map(|(k, s)| service_doc(k, s))
                .collect(),
            Kind::ConfigMap => self
                .configmaps
                .iter()
                .filter(|(k, _)| f.keeps(k) && sel.is_none())
                .map(|(k, d)| configmap_doc(k, d))
                .collect(),
            Kind::Secret => self
                .secrets
                .iter()
                .filter(|(k, _)| f.keeps(k) && sel.is_none())
                .map(|(k, d)| secret_doc(k, d))
                .collect(),
            Kind::Job => self
                .jobs
                .iter()
                .filter(|(k, _)| f.keeps(k) && sel.is_none())
                .map(|(k, j)| job_doc(k, j))
                .collect(),
            // Cluster-scoped RBAC objects are visible from every namespace.
            Kind::Role => self
                .roles
                .iter()
                .filter(|(k, _)| rbac_visible(f, k) && sel.is_none())
                .map(|(k, r)| role_doc(k, r))
                .collect(),
            Kind::RoleBinding => self
                .rolebindings
                .iter()
                .filter(|(k, _)| rbac_visible(f, k) && sel.is_none())
                .map(|(k, b)| rolebinding_doc(k, b))
                .collect(),
            Kind::ServiceAccount => self
                .serviceaccounts
                .iter()
                .filter(|k| f.keeps(k) && sel.is_none())
                .map(serviceaccount_doc)
                .collect(),
            Kind::Event => {
                let mut docs: Vec<(usize, &Event)> = self
                    .events
                    .iter()
                    .enumerate()
                    .filter(|(i, e)| {
                        f.namespace.is_none_or(|ns| ns == e.namespace)
                            && f.name.is_none_or(|n| n == format!("event-{i}"))
                            && sel.is_none()
                    })
                    .collect();
                // Events stay in insertion order rather than name order.
                docs.sort_by_key(|(i, _)| *i);
                docs.into_iter().map(|(i, e)| event_doc(i, e)).collect()
            }
            Kind::Node => self
                .nodes
                .iter()
                .filter(|(n, _)| f.keeps_cluster(n) && sel.is_none())
                .map(|(n, node)| node_doc(n, node))
                .collect(),
            Kind::PodMetrics => self
                .pod_metrics
                .iter()
                .filter(|(k, _)| f.keeps(k) && sel.is_none())
                .map(|(k, m)| metrics_doc(Kind::PodMetrics, Some(&k.namespace), &k.name, m))
                .collect(),
            Kind::NodeMetrics => self
                .node_metrics
                .iter()
                .filter(|(n, _)| f.keeps_cluster(n) && sel.is_none())
                .map(|(n, m)| metrics_doc(Kind::NodeMetrics, None, n, m))
                .collect(),
        }
    }
}

fn rbac_visible(f: &Filter<'_>, k: &ObjKey) -> bool {
    (k.namespace.is_empty() || f.namespace.is_none_or(|ns| ns == k.namespace))
        && f.name.is_none_or(|n| n == k.name)
}

// ---------------------------------------------------------------------------
// Manifests

/// Fields a manifest `spec` may carry, per kind. Every field is optional so
/// the same struct serves create/replace (required fields checked) and
/// patch (only provided fields applied).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecPatch {
    // pod
    containers: Option<Vec<String>>,
    labels: Option<Labels>,
    owner: Option<String>,
    node: Option<String>,
    phase: Option<PodPhase>,
    // deployment
    replicas: Option<i64>,
    strategy: Option<String>,
    image: Option<String>,
    // service
    #[serde(rename = "type")]
    service_type: Option<String>,
    ports: Option<Vec<u16>>,
    selector: Option<Labels>,
    external_ip: Option<String>,
    // configmap / secret; a null value removes the key on patch
    data: Option<BTreeMap<String, Option<String>>>,
    // job
    completions: Option<u32>,
    // role
    rules: Option<Vec<PolicyRule>>,
    // rolebinding
    role: Option<String>,
    subjects: Option<Vec<String>>,
    // node
    schedulable: Option<bool>,
}

fn parse_spec(manifest: &Value) -> Result<SpecPatch, KubeError> {
    let spec = match manifest.get("spec") {
        Some(s) => s.clone(),
        None => Value::Object(Map::new()),
    };
    serde_json::from_value(spec).map_err(|e| KubeError::Validation(format!("manifest spec: {e}")))
}

fn missing(field: &str, kind: Kind) -> KubeError {
    KubeError::Validation(format!("{kind} manifest requires spec.{field}"))
}

fn replicas(v: i64) -> Result<u32, KubeError> {
    u32::try_from(v).map_err(|_| KubeError::Validation(format!("replicas must be >= 0, got {v}")))
}

fn merge_data(base: &mut BTreeMap<String, String>, patch: BTreeMap<String, Option<String>>) {
    for (k, v) in patch {
        match v {
            Some(v) => {
                base.insert(k, v);
            }
            None => {
                base.remove(&k);
            }
        }
    }
}

fn full_data(patch: Option<BTreeMap<String, Option<String>>>) -> BTreeMap<String, String> {
    patch
        .unwrap_or_default()
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Apply {
    /// Build from scratch; the object must not exist.
    Create,
    /// Build from scratch over an existing object, keeping runtime status.
    Replace,
    /// Merge provided fields into an existing object.
    Patch,
}

impl ClusterModel {
    /// Applies a manifest to the model and returns the post-state document.
    pub fn write_object(
        &mut self,
        kind: Kind,
        namespace: Option<&str>,
        name: &str,
        manifest: &Value,
        how: Apply,
    ) -> Result<Value, KubeError> {
        if name.is_empty() {
            return Err(KubeError::Validation("resource name is required".into()));
        }
        let spec = parse_spec(manifest)?;
        let ns = if kind.is_namespaced() {
            let ns = namespace
                .filter(|n| !n.is_empty())
                .or(if matches!(kind, Kind::Role | Kind::RoleBinding) { Some("") } else { None })
                .ok_or_else(|| KubeError::Validation(format!("{kind} requires a namespace")))?;
            if !ns.is_empty() {
                self.require_namespace(ns)?;
            }
            ns.to_string()
        } else {
            String::new()
        };
        let key = ObjKey::new(&ns, name);
        let exists = self.contains(kind, &key);
        match (how, exists) {
            (Apply::Create, true) => {
                return Err(KubeError::AlreadyExists {
                    kind: kind.to_string(),
                    name: name.to_string(),
                })
            }
            (Apply::Replace | Apply::Patch, false) => {
                return Err(KubeError::not_found(kind, ns_opt(&ns), name))
            }
            _ => {}
        }
        match kind {
            Kind::Namespace => {
                self.namespaces.insert(name.to_string());
                Ok(namespace_doc(name))
            }
            Kind::Pod => {
                let prior = self.pods.get(&key).cloned();
                let pod = match (how, prior) {
                    (Apply::Patch, Some(mut p)) => {
                        if let Some(c) = spec.containers {
                            p.containers = c;
                        }
                        if let Some(l) = spec.labels {
                            p.labels = l;
                        }
                        if spec.owner.is_some() {
                            p.owner = spec.owner;
                        }
                        if spec.node.is_some() {
                            p.node = spec.node;
                        }
                        if let Some(ph) = spec.phase {
                            p.phase = ph;
                        }
                        p
                    }
                    (_, prior) => Pod {
                        containers: spec.containers.ok_or_else(|| missing("containers", kind))?,
                        phase: spec.phase.unwrap_or(PodPhase::Running),
                        log_text: prior.as_ref().map(|p| p.log_text.clone()).unwrap_or_default(),
                        restart_count: prior.as_ref().map_or(0, |p| p.restart_count),
                        labels: spec.labels.unwrap_or_default(),
                        owner: spec.owner,
                        node: spec.node,
                    },
                };
                if pod.containers.is_empty() {
                    return Err(KubeError::Validation("pod needs at least one container".into()));
                }
                if let Some(o) = &pod.owner {
                    if !self.deployments.contains_key(&ObjKey::new(&ns, o)) {
                        return Err(KubeError::Validation(format!("owner deployment {o} does not exist")));
                    }
                }
                if let Some(n) = &pod.node {
                    if !self.nodes.contains_key(n) {
                        return Err(KubeError::Validation(format!("node {n} does not exist")));
                    }
                }
                self.pod_metrics.entry(key.clone()).or_default();
                let doc = pod_doc(&key, &pod);
                self.pods.insert(key, pod);
                Ok(doc)
            }
            Kind::Deployment => {
                let prior = self.deployments.get(&key).cloned();
                let dep = match (how, prior) {
                    (Apply::Patch, Some(mut d)) => {
                        if let Some(r) = spec.replicas {
                            d.replicas = replicas(r)?;
                        }
                        if let Some(s) = spec.strategy {
                            d.strategy = s;
                        }
                        if let Some(i) = spec.image {
                            d.image = i;
                        }
                        if let Some(l) = spec.labels {
                            d.labels = l;
                        }
                        d
                    }
                    _ => Deployment {
                        replicas: replicas(spec.replicas.ok_or_else(|| missing("replicas", kind))?)?,
                        ready_replicas: 0,
                        strategy: spec.strategy.unwrap_or_else(default_strategy),
                        image: spec.image.unwrap_or_default(),
                        labels: spec.labels.unwrap_or_default(),
                    },
                };
                self.deployments.insert(key.clone(), dep);
                self.reconcile(&key);
                Ok(deployment_doc(&key, &self.deployments[&key]))
            }
            Kind::Service => {
                let prior = self.services.get(&key).cloned();
                let svc = match (how, prior) {
                    (Apply::Patch, Some(mut s)) => {
                        if let Some(t) = spec.service_type {
                            s.service_type = t;
                        }
                        if let Some(p) = spec.ports {
                            s.ports = p;
                        }
                        if let Some(sel) = spec.selector {
                            s.selector = sel;
                        }
                        if spec.external_ip.is_some() {
                            s.external_ip = spec.external_ip;
                        }
                        s
                    }
                    _ => Service {
                        service_type: spec.service_type.unwrap_or_else(default_service_type),
                        ports: spec.ports.ok_or_else(|| missing("ports", kind))?,
                        external_ip: spec.external_ip,
                        selector: spec.selector.unwrap_or_default(),
                    },
                };
                let doc = service_doc(&key, &svc);
                self.services.insert(key, svc);
                Ok(doc)
            }
            Kind::ConfigMap | Kind::Secret => {
                let map = if kind == Kind::ConfigMap {
                    &mut self.configmaps
                } else {
                    &mut self.secrets
                };
                let data = match (how, map.get(&key).cloned()) {
                    (Apply::Patch, Some(mut d)) => {
                        merge_data(&mut d, spec.data.unwrap_or_default());
                        d
                    }
                    _ => full_data(spec.data),
                };
                let doc = if kind == Kind::ConfigMap {
                    configmap_doc(&key, &data)
                } else {
                    secret_doc(&key, &data)
                };
                map.insert(key, data);
                Ok(doc)
            }
            Kind::Job => {
                let prior = self.jobs.get(&key).cloned();
                let job = match (how, prior) {
                    (Apply::Patch, Some(mut j)) => {
                        if let Some(c) = spec.completions {
                            j.completions = c;
                        }
                        j
                    }
                    (_, prior) => Job {
                        state: prior.as_ref().map_or(JobState::Running, |j| j.state),
                        completions: spec.completions.unwrap_or(1),
                        succeeded: prior.as_ref().map_or(0, |j| j.succeeded),
                        failed: prior.as_ref().map_or(0, |j| j.failed),
                    },
                };
                let doc = job_doc(&key, &job);
                self.jobs.insert(key, job);
                Ok(doc)
            }
            Kind::Role => {
                let rules = match (how, self.roles.get(&key)) {
                    (Apply::Patch, Some(r)) => spec.rules.unwrap_or_else(|| r.rules.clone()),
                    _ => spec.rules.ok_or_else(|| missing("rules", kind))?,
                };
                let role = Role { rules };
                let doc = role_doc(&key, &role);
                self.roles.insert(key, role);
                Ok(doc)
            }
            Kind::RoleBinding => {
                let binding = match (how, self.rolebindings.get(&key).cloned()) {
                    (Apply::Patch, Some(mut b)) => {
                        if let Some(r) = spec.role {
                            b.role = r;
                        }
                        if let Some(s) = spec.subjects {
                            b.subjects = s;
                        }
                        b
                    }
                    _ => RoleBinding {
                        role: spec.role.ok_or_else(|| missing("role", kind))?,
                        subjects: spec.subjects.ok_or_else(|| missing("subjects", kind))?,
                    },
                };
                let doc = rolebinding_doc(&key, &binding);
                self.rolebindings.insert(key, binding);
                Ok(doc)
            }
            Kind::ServiceAccount => {
                self.serviceaccounts.insert(key.clone());
                Ok(serviceaccount_doc(&key))
            }
            Kind::Node => {
                let node = match (how, self.nodes.get(name).cloned()) {
                    (Apply::Patch, Some(mut n)) => {
                        if let Some(s) = spec.schedulable {
                            n.schedulable = s;
                        }
                        n
                    }
                    (_, prior) => Node {
                        schedulable: spec.schedulable.unwrap_or(true),
                        capacity: prior.map(|n| n.capacity).unwrap_or(NodeCapacity {
                            cpu_millicores: 4000,
                            memory_mib: 16384,
                            pods: 110,
                        }),
                    },
                };
                let doc = node_doc(name, &node);
                self.nodes.insert(name.to_string(), node);
                self.node_metrics.entry(name.to_string()).or_default();
                Ok(doc)
            }
            Kind::Event | Kind::PodMetrics | Kind::NodeMetrics => Err(KubeError::Validation(format!(
                "{kind} objects are read-only"
            ))),
        }
    }

    pub fn contains(&self, kind: Kind, key: &ObjKey) -> bool {
        match kind {
            Kind::Namespace => self.namespaces.contains(&key.name),
            Kind::Pod => self.pods.contains_key(key),
            Kind::Deployment => self.deployments.contains_key(key),
            Kind::Service => self.services.contains_key(key),
            Kind::ConfigMap => self.configmaps.contains_key(key),
            Kind::Secret => self.secrets.contains_key(key),
            Kind::Job => self.jobs.contains_key(key),
            Kind::Role => self.roles.contains_key(key),
            Kind::RoleBinding => self.rolebindings.contains_key(key),
            Kind::ServiceAccount => self.serviceaccounts.contains(key),
            Kind::Node => self.nodes.contains_key(&key.name),
            Kind::PodMetrics => self.pod_metrics.contains_key(key),
            Kind::NodeMetrics => self.node_metrics.contains_key(&key.name),
            Kind::Event => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ClusterModel {
        ClusterModel::from_toml(
            r#"
namespaces = ["a"]
[[nodes]]
name = "n1"
schedulable = true
capacity = { cpu_millicores = 1000, memory_mib = 1024, pods = 10 }
[[deployments]]
namespace = "a"
name = "web"
replicas = 1
"#,
        )
        .unwrap()
    }

    #[test]
    fn fixture_roundtrips_through_toml() {
        let mut m = tiny();
        m.reconcile(&ObjKey::new("a", "web"));
        let text = m.to_toml();
        let back = ClusterModel::from_toml(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn integrity_rejects_orphans() {
        let err = ClusterModel::from_toml(
            "namespaces = []\n[[pods]]\nnamespace = \"x\"\nname = \"p\"\ncontainers = [\"c\"]\nphase = \"Running\"\n",
        )
        .unwrap_err();
        assert!(matches!(err, KubeError::Validation(m) if m.contains("missing namespace")));
    }

    #[test]
    fn reconcile_scales_both_ways() {
        let mut m = tiny();
        let key = ObjKey::new("a", "web");
        m.deployments.get_mut(&key).unwrap().replicas = 3;
        m.reconcile(&key);
        assert_eq!(m.pods.len(), 3);
        assert!(m.pods.contains_key(&ObjKey::new("a", "web-2")));
        m.deployments.get_mut(&key).unwrap().replicas = 1;
        m.reconcile(&key);
        assert_eq!(m.pods.keys().map(|k| k.name.as_str()).collect::<Vec<_>>(), ["web-0"]);
        m.check_integrity().unwrap();
    }

    #[test]
    fn patch_merges_configmap_data() {
        let mut m = tiny();
        let base = json!({"spec": {"data": {"x": "1", "y": "2"}}});
        m.write_object(Kind::ConfigMap, Some("a"), "cfg", &base, Apply::Create).unwrap();
        let patch = json!({"spec": {"data": {"z": "3", "x": null}}});
        let doc = m.write_object(Kind::ConfigMap, Some("a"), "cfg", &patch, Apply::Patch).unwrap();
        assert_eq!(doc["spec"]["data"], json!({"y": "2", "z": "3"}));
    }

    #[test]
    fn secrets_are_redacted() {
        let mut m = tiny();
        let doc = m
            .write_object(Kind::Secret, Some("a"), "s", &json!({"spec": {"data": {"pw": "hunter2"}}}), Apply::Create)
            .unwrap();
        assert_eq!(doc["spec"]["data"]["pw"], REDACTED);
        assert!(!doc.to_string().contains("hunter2"));
    }
}
