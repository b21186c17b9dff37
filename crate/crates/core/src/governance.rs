//! Role-based category gate and the append-only audit trail.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::framed::{sha256_hex, FrameError, FramedLog};
use crate::kube::VerbCategory;

#[derive(Debug, Error)]
pub enum GovernanceError {
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("invalid role configuration: {0}")]
    InvalidRoles(String),
    #[error("audit storage fault: {0}")]
    StorageFault(String),
}

impl From<FrameError> for GovernanceError {
    fn from(e: FrameError) -> Self {
        Self::StorageFault(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRole {
    pub name: String,
    pub allowed_categories: BTreeSet<VerbCategory>,
    /// Read-only roles may hold nothing beyond `Read`.
    #[serde(default)]
    pub read_only: bool,
}

impl UserRole {
    pub fn new(name: impl Into<String>, categories: impl IntoIterator<Item = VerbCategory>) -> Self {
        let allowed_categories: BTreeSet<_> = categories.into_iter().collect();
        let read_only = allowed_categories.iter().all(|c| *c == VerbCategory::Read);
        Self {
            name: name.into(),
            allowed_categories,
            read_only,
        }
    }

    pub fn allows(&self, category: VerbCategory) -> bool {
        self.allowed_categories.contains(&category)
    }
}

#[derive(Deserialize)]
struct RoleDoc {
    #[serde(default)]
    roles: Vec<UserRole>,
}

/// Registered roles keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTable {
    roles: BTreeMap<String, UserRole>,
}

impl Default for RoleTable {
    /// `viewer` (read-only), `operator`, and `admin` (all seven categories).
    fn default() -> Self {
        use VerbCategory::*;
        Self::new(vec![
            UserRole::new("viewer", [Read]),
            UserRole::new("operator", [Read, WriteModify, ScaleLifecycle, ExecuteProxy]),
            UserRole::new("admin", VerbCategory::ALL),
        ])
        .expect("default roles are valid")
    }
}

impl RoleTable {
    pub fn new(roles: Vec<UserRole>) -> Result<Self, GovernanceError> {
        let mut map = BTreeMap::new();
        for role in roles {
            if role.name.trim().is_empty() {
                return Err(GovernanceError::InvalidRoles("role name is empty".into()));
            }
            if role.read_only && role.allowed_categories.iter().any(|c| c.is_privileged()) {
                return Err(GovernanceError::InvalidRoles(format!(
                    "read-only role {} grants privileged categories",
                    role.name
                )));
            }
            if map.insert(role.name.clone(), role.clone()).is_some() {
                return Err(GovernanceError::InvalidRoles(format!("duplicate role {}", role.name)));
            }
        }
        if map.is_empty() {
            return Err(GovernanceError::InvalidRoles("no roles defined".into()));
        }
        Ok(Self { roles: map })
    }

    /// Parses `[[roles]]` entries from TOML (or JSON when the text starts with `{`).
    pub fn parse(text: &str) -> Result<Self, GovernanceError> {
        let doc: RoleDoc = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| GovernanceError::InvalidRoles(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| GovernanceError::InvalidRoles(e.to_string()))?
        };
        Self::new(doc.roles)
    }

    pub fn load(path: &Path) -> Result<Self, GovernanceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GovernanceError::InvalidRoles(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&UserRole, GovernanceError> {
        self.roles
            .get(name)
            .ok_or_else(|| GovernanceError::UnknownRole(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.roles.keys().map(String::as_str)
    }

    pub fn authorize(&self, role: &str, category: VerbCategory) -> Result<bool, GovernanceError> {
        Ok(self.get(role)?.allows(category))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    QueryReceived,
    QueryRejected,
    RoutingDecision,
    ToolDispatched,
    ToolResult,
    LlmCall,
    CodegenStage,
    ToolRegistered,
    InterruptRaised,
    InterruptResolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub actor: String,
    pub action: AuditAction,
    pub target: String,
    pub payload_digest: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

/// A record before the log assigns its id and timestamp.
#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub session_id: Option<String>,
    pub actor: String,
    pub action: AuditAction,
    pub target: String,
    pub payload: Value,
    pub outcome: String,
}

impl AuditEntry {
    pub fn new(
        action: AuditAction,
        actor: impl Into<String>,
        target: impl Into<String>,
        payload: Value,
        outcome: impl Into<String>,
    ) -> Self {
        Self {
            session_id: None,
            actor: actor.into(),
            action,
            target: target.into(),
            payload,
            outcome: outcome.into(),
        }
    }

    pub fn session(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = Some(session_id.into());
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditFilter {
    pub session_id: Option<String>,
    pub action: Option<AuditAction>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl AuditFilter {
    pub fn session(id: &str) -> Self {
        Self {
            session_id: Some(id.to_string()),
            ..Self::default()
        }
    }

    pub fn action(action: AuditAction) -> Self {
        Self {
            action: Some(action),
            ..Self::default()
        }
    }

    pub fn matches(&self, r: &AuditRecord) -> bool {
        self.session_id.as_ref().is_none_or(|s| r.session_id.as_ref() == Some(s))
            && self.action.is_none_or(|a| r.action == a)
            && self.since.is_none_or(|t| r.timestamp >= t)
            && self.until.is_none_or(|t| r.timestamp <= t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditOptions {
    /// Store full payloads inside each record.
    pub inline_payloads: bool,
    /// Write full payload bodies to `<dir>/<digest>.json`.
    pub payload_dir: Option<PathBuf>,
}

/// Append-only audit trail, in memory or backed by a framed log file.
#[derive(Debug)]
pub struct AuditLog {
    records: RwLock<Vec<AuditRecord>>,
    file: Option<FramedLog>,
    last_ts: Mutex<HashMap<String, DateTime<Utc>>>,
    options: AuditOptions,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::with_parts(Vec::new(), None, AuditOptions::default())
    }

    /// Opens (or creates) a file-backed log, loading existing records.
    pub fn open(path: &Path, options: AuditOptions) -> Result<Self, GovernanceError> {
        let (file, lines) = FramedLog::open(path, true)?;
        let mut records = Vec::with_capacity(lines.len());
        for line in lines {
            let rec: AuditRecord = serde_json::from_str(&line)
                .map_err(|e| GovernanceError::StorageFault(format!("undecodable audit record: {e}")))?;
            records.push(rec);
        }
        Ok(Self::with_parts(records, Some(file), options))
    }

    pub fn with_options(options: AuditOptions) -> Self {
        Self::with_parts(Vec::new(), None, options)
    }

    fn with_parts(records: Vec<AuditRecord>, file: Option<FramedLog>, options: AuditOptions) -> Self {
        let mut last = HashMap::new();
        for r in &records {
            if let Some(s) = &r.session_id {
                last.insert(s.clone(), r.timestamp);
            }
        }
        Self {
            records: RwLock::new(records),
            file,
            last_ts: Mutex::new(last),
            options,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(FramedLog::path)
    }

    pub fn append(&self, entry: AuditEntry) -> Result<String, GovernanceError> {
        let body = serde_json::to_string(&entry.payload).unwrap_or_default();
        let digest = sha256_hex(body.as_bytes());
        if let Some(dir) = &self.options.payload_dir {
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(dir.join(format!("{digest}.json")), &body))
                .map_err(|e| GovernanceError::StorageFault(e.to_string()))?;
        }
        // Hold the timestamp table for the whole append so per-session
        // ordering matches file order.
        let mut last = self.last_ts.lock();
        let mut timestamp = Utc::now();
        if let Some(s) = &entry.session_id {
            if let Some(prev) = last.get(s) {
                if timestamp < *prev {
                    timestamp = *prev;
                }
            }
        }
        let record = AuditRecord {
            record_id: uuid::Uuid::new_v4().to_string(),
            timestamp,
            session_id: entry.session_id.clone(),
            actor: entry.actor,
            action: entry.action,
            target: entry.target,
            payload_digest: digest,
            outcome: entry.outcome,
            payload: self.options.inline_payloads.then_some(entry.payload),
        };
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&record).map_err(|e| GovernanceError::StorageFault(e.to_string()))?;
            file.append(&line)?;
        }
        if let Some(s) = entry.session_id {
            last.insert(s, timestamp);
        }
        let id = record.record_id.clone();
        self.records.write().push(record);
        Ok(id)
    }

    /// Matching records in timestamp order (ties keep append order).
    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditRecord> {
        let mut out: Vec<AuditRecord> = self
            .records
            .read()
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by_key(|r| r.timestamp);
        out
    }

    pub fn all(&self) -> Vec<AuditRecord> {
        self.records.read().clone()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, filter: &AuditFilter) -> usize {
        self.records.read().iter().filter(|r| filter.matches(r)).count()
    }
}
