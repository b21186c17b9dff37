//! Cluster abstraction.
//!
//! [`ClusterBackend`] covers the seven verb categories (read, write/modify,
//! delete, execute/proxy, permission & auth, scale/lifecycle,
//! custom/advanced). Two implementations exist: [`FakeCluster`], a
//! deterministic in-memory model used for tests and demos, and
//! [`RealCluster`], a thin REST adapter for a live API server.
//!
//! All backends return documents in one normalized shape:
//! `{kind, namespace, name, spec: {...}, status: {...}}`.

mod fake;
pub mod fixtures;
pub mod model;
mod real;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use fake::FakeCluster;
pub use model::ClusterModel;
pub use real::{RealCluster, RealClusterConfig};

/// The seven operation categories of the Kubernetes API surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerbCategory {
    Read,
    WriteModify,
    Delete,
    ExecuteProxy,
    PermissionAuth,
    ScaleLifecycle,
    CustomAdvanced,
}

impl VerbCategory {
    pub const ALL: [VerbCategory; 7] = [
        Self::Read,
        Self::WriteModify,
        Self::Delete,
        Self::ExecuteProxy,
        Self::PermissionAuth,
        Self::ScaleLifecycle,
        Self::CustomAdvanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Read => "Read",
            Self::WriteModify => "WriteModify",
            Self::Delete => "Delete",
            Self::ExecuteProxy => "ExecuteProxy",
            Self::PermissionAuth => "PermissionAuth",
            Self::ScaleLifecycle => "ScaleLifecycle",
            Self::CustomAdvanced => "CustomAdvanced",
        }
    }

    /// Anything beyond plain reads.
    pub fn is_privileged(self) -> bool {
        self != Self::Read
    }
}

impl fmt::Display for VerbCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerbCategory {
    type Err = KubeError;

    /// Accepts `WriteModify`, `Write/Modify`, `write-modify`, `Permission & Auth`, ...
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match norm.as_str() {
            "read" => Self::Read,
            "writemodify" | "write" => Self::WriteModify,
            "delete" => Self::Delete,
            "executeproxy" | "execute" | "exec" => Self::ExecuteProxy,
            "permissionauth" | "permission" | "auth" => Self::PermissionAuth,
            "scalelifecycle" | "lifecycle" | "scale" => Self::ScaleLifecycle,
            "customadvanced" | "advanced" | "custom" => Self::CustomAdvanced,
            _ => return Err(KubeError::Validation(format!("unknown verb category {s:?}"))),
        })
    }
}

/// Resource kinds understood by the backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Namespace,
    Pod,
    Deployment,
    Service,
    ConfigMap,
    Secret,
    Job,
    Role,
    RoleBinding,
    ServiceAccount,
    Event,
    Node,
    PodMetrics,
    NodeMetrics,
}

impl Kind {
    pub const ALL: [Kind; 14] = [
        Kind::Namespace,
        Kind::Pod,
        Kind::Deployment,
        Kind::Service,
        Kind::ConfigMap,
        Kind::Secret,
        Kind::Job,
        Kind::Role,
        Kind::RoleBinding,
        Kind::ServiceAccount,
        Kind::Event,
        Kind::Node,
        Kind::PodMetrics,
        Kind::NodeMetrics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Namespace => "namespace",
            Kind::Pod => "pod",
            Kind::Deployment => "deployment",
            Kind::Service => "service",
            Kind::ConfigMap => "configmap",
            Kind::Secret => "secret",
            Kind::Job => "job",
            Kind::Role => "role",
            Kind::RoleBinding => "rolebinding",
            Kind::ServiceAccount => "serviceaccount",
            Kind::Event => "event",
            Kind::Node => "node",
            Kind::PodMetrics => "podmetrics",
            Kind::NodeMetrics => "nodemetrics",
        }
    }

    pub fn parse(s: &str) -> Result<Self, KubeError> {
        let norm = s.trim().to_ascii_lowercase();
        let kind = match norm.as_str() {
            "namespace" | "namespaces" | "ns" => Kind::Namespace,
            "pod" | "pods" | "po" => Kind::Pod,
            "deployment" | "deployments" | "deploy" => Kind::Deployment,
            "service" | "services" | "svc" => Kind::Service,
            "configmap" | "configmaps" | "cm" => Kind::ConfigMap,
            "secret" | "secrets" => Kind::Secret,
            "job" | "jobs" => Kind::Job,
            "role" | "roles" | "clusterrole" | "clusterroles" => Kind::Role,
            "rolebinding" | "rolebindings" | "clusterrolebinding" | "clusterrolebindings" => Kind::RoleBinding,
            "serviceaccount" | "serviceaccounts" | "sa" => Kind::ServiceAccount,
            "event" | "events" | "ev" => Kind::Event,
            "node" | "nodes" | "no" => Kind::Node,
            "podmetrics" | "podmetric" => Kind::PodMetrics,
            "nodemetrics" | "nodemetric" => Kind::NodeMetrics,
            _ => return Err(KubeError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }

    pub fn is_namespaced(self) -> bool {
        !matches!(self, Kind::Namespace | Kind::Node | Kind::NodeMetrics)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Labels = BTreeMap<String, String>;

/// Identifies a resource or a set of resources.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRef {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<Labels>,
}

impl ResourceRef {
    pub fn kind(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn in_namespace(mut self, namespace: impl Into<String>) -> Self {
        self.namespace = Some(namespace.into());
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_selector(mut self, selector: Labels) -> Self {
        self.selector = Some(selector);
        self
    }

    /// Checks the ref's own invariants and resolves its kind.
    pub fn validate(&self) -> Result<Kind, KubeError> {
        if self.name.is_some() && self.selector.is_some() {
            return Err(KubeError::Validation(
                "a resource ref may not set both name and selector".into(),
            ));
        }
        Kind::parse(&self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteMode {
    Create,
    Update,
    Patch,
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleAction {
    Scale,
    Restart,
    Cordon,
    Uncordon,
    Evict,
    RolloutStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutput {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub allowed: bool,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyResult {
    Created,
    Updated,
    Unchanged,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyOutcome {
    pub kind: String,
    pub namespace: Option<String>,
    pub name: Option<String>,
    pub result: ApplyResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBatch {
    pub events: Vec<Value>,
    /// Pass back on the next poll to receive only newer events.
    pub cursor: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum KubeError {
    #[error("unknown resource kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} {name:?} not found{}", namespace.as_ref().map(|n| format!(" in namespace {n:?}")).unwrap_or_default())]
    NotFound {
        kind: String,
        namespace: Option<String>,
        name: String,
    },
    #[error("{kind} {name:?} already exists")]
    AlreadyExists { kind: String, name: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("pod {0:?} is not running")]
    PodNotRunning(String),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),
    #[error("backend fault: {0}")]
    Backend(String),
    #[error("fixture {0:?} not found")]
    FixtureNotFound(String),
}

impl KubeError {
    pub fn not_found(kind: Kind, namespace: Option<&str>, name: &str) -> Self {
        Self::NotFound {
            kind: kind.to_string(),
            namespace: namespace.map(str::to_string),
            name: name.to_string(),
        }
    }
}

/// Uniform cluster contract shared by the fake model and the live adapter.
pub trait ClusterBackend: Send + Sync {
    fn name(&self) -> &str;

    fn read(&self, target: &ResourceRef) -> Result<Vec<Value>, KubeError>;

    fn get_logs(&self, namespace: &str, pod: &str, tail: Option<usize>) -> Result<String, KubeError>;

    /// Bounded poll for events after `cursor`. Never blocks past `max_wait`.
    fn watch_events(
        &self,
        namespace: Option<&str>,
        cursor: u64,
        max_items: usize,
        max_wait: Duration,
    ) -> Result<EventBatch, KubeError>;

    fn write(&self, target: &ResourceRef, manifest: &Value, mode: WriteMode) -> Result<Value, KubeError>;

    /// Returns the number of deleted resources. In collection mode a miss is
    /// not an error.
    fn delete(&self, target: &ResourceRef, collection: bool) -> Result<usize, KubeError>;

    fn exec_in_pod(&self, namespace: &str, pod: &str, command: &[String]) -> Result<ExecOutput, KubeError>;

    fn access_review(
        &self,
        subject: &str,
        category: VerbCategory,
        target: &ResourceRef,
    ) -> Result<AccessDecision, KubeError>;

    fn lifecycle(&self, action: LifecycleAction, target: &ResourceRef, params: &Value) -> Result<Value, KubeError>;

    fn apply_manifest(&self, document: &Value) -> Result<Vec<ApplyOutcome>, KubeError>;

    /// Whole-cluster read used as the input document for generated tools.
    fn snapshot(&self) -> Result<Value, KubeError> {
        let mut out = serde_json::Map::new();
        for kind in Kind::ALL {
            let docs = match self.read(&ResourceRef::kind(kind.as_str())) {
                Ok(docs) => docs,
                Err(KubeError::Unsupported(_)) => continue,
                Err(e) => return Err(e),
            };
            let key = format!("{}s", kind.as_str());
            out.insert(key, Value::Array(docs));
        }
        Ok(Value::Object(out))
    }

    fn healthy(&self) -> bool {
        true
    }
}

/// Splits `key=value,key2=value2` into a label map.
pub fn parse_selector(text: &str) -> Result<Labels, KubeError> {
    let mut labels = Labels::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| KubeError::Validation(format!("bad selector term {part:?}")))?;
        labels.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(labels)
}
