//! Agents, their tools, tool selection and dispatch.

mod builtin;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use builtin::{builtin_tools, default_descriptors, is_error_line, pod_summary, BuiltinTool, Handler};
pub use store::{IndexEntry, Manifest, ToolStore};

use crate::directive::{self, Directive, DirectiveError};
use crate::framed::sha256_hex;
use crate::governance::{AuditAction, AuditEntry, AuditLog, RoleTable};
use crate::kube::{ClusterBackend, VerbCategory};
use crate::llm::{ChatMessage, LlmError, LlmGateway, Purpose};
use crate::sandbox::Sandbox;

/// Extra attempts granted when the model returns an unusable directive.
pub const DIRECTIVE_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentName {
    Logs,
    Configs,
    #[serde(rename = "RBAC")]
    Rbac,
    Metrics,
    Security,
    Lifecycle,
    Execution,
    Deletion,
    AdvancedOps,
    CodeGenerator,
}

impl AgentName {
    pub const ALL: [AgentName; 10] = [
        Self::Logs,
        Self::Configs,
        Self::Rbac,
        Self::Metrics,
        Self::Security,
        Self::Lifecycle,
        Self::Execution,
        Self::Deletion,
        Self::AdvancedOps,
        Self::CodeGenerator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Logs => "Logs",
            Self::Configs => "Configs",
            Self::Rbac => "RBAC",
            Self::Metrics => "Metrics",
            Self::Security => "Security",
            Self::Lifecycle => "Lifecycle",
            Self::Execution => "Execution",
            Self::Deletion => "Deletion",
            Self::AdvancedOps => "AdvancedOps",
            Self::CodeGenerator => "CodeGenerator",
        }
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentName {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(t))
            .or_else(|| {
                // Tolerate "Logs Agent", "code_generator" and the like.
                let squashed: String = t
                    .trim_end_matches(" Agent")
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect();
                Self::ALL.into_iter().find(|a| a.as_str().eq_ignore_ascii_case(&squashed))
            })
            .ok_or_else(|| RegistryError::UnknownAgent(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub name: AgentName,
    pub description: String,
    pub tool_names: Vec<String>,
    pub prompt_template: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticType {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "integer")]
    Integer,
    #[serde(rename = "boolean")]
    Boolean,
    #[serde(rename = "list-of-text")]
    ListOfText,
}

impl SemanticType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Integer => "integer",
            Self::Boolean => "boolean",
            Self::ListOfText => "list-of-text",
        }
    }

    pub fn matches(self, v: &Value) -> bool {
        match self {
            Self::Text => v.is_string(),
            Self::Integer => v.is_i64() || v.is_u64(),
            Self::Boolean => v.is_boolean(),
            Self::ListOfText => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }

    /// Converts a directive value into this type.
    pub fn coerce(self, raw: &str) -> Option<Value> {
        let raw = raw.trim();
        match self {
            Self::Text => Some(json!(raw)),
            Self::Integer => raw.parse::<i64>().ok().map(|n| json!(n)),
            Self::Boolean => match raw.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Some(json!(true)),
                "false" | "no" | "0" => Some(json!(false)),
                _ => None,
            },
            Self::ListOfText => Some(json!(directive::split_list(raw))),
        }
    }
}

impl FromStr for SemanticType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "string" | "str" => Ok(Self::Text),
            "integer" | "int" => Ok(Self::Integer),
            "boolean" | "bool" => Ok(Self::Boolean),
            "list-of-text" | "list" | "list[str]" => Ok(Self::ListOfText),
            other => Err(format!("unknown semantic type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemanticType,
    pub required: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolOrigin {
    Builtin,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Artifact {
    Builtin { handler: String },
    Script { path: String, digest: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: Vec<FieldSpec>,
    pub owner_agent: AgentName,
    pub origin: ToolOrigin,
    pub version: u32,
    pub artifact: Artifact,
    pub category: VerbCategory,
    pub llm_produced: bool,
}

impl ToolSpec {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.input_schema.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Success,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub data: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default)]
    pub produced_at_step: u64,
}

impl ToolResult {
    pub fn success(data: Value, step: u64) -> Self {
        Self {
            status: ToolStatus::Success,
            data,
            error_message: None,
            produced_at_step: step,
        }
    }

    pub fn error(message: impl Into<String>, step: u64) -> Self {
        let message = message.into();
        Self {
            status: ToolStatus::Error,
            data: json!({"error": message}),
            error_message: Some(message),
            produced_at_step: step,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ToolStatus::Success
    }

    /// The `{"status", "data"}` envelope.
    pub fn envelope(&self) -> Value {
        json!({"status": self.status, "data": self.data})
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolMetadata {
    pub function_name: String,
    pub input_schema: Vec<FieldSpec>,
    pub tool_variable_name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchOutcome {
    Tool(Box<ToolSpec>),
    NoMatch,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("agent {0} registered twice")]
    DuplicateAgent(String),
    #[error("agent {0} missing from registration")]
    MissingAgent(String),
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("model selected {selected:?}, not a tool of {agent}")]
    InvalidSelection { agent: String, selected: String },
    #[error("arguments for {tool} violate its schema: {reason}")]
    SchemaViolation { tool: String, reason: String },
    #[error("tool name {0:?} already taken")]
    NameCollision(String),
    #[error("registry storage fault: {0}")]
    StorageFault(String),
    #[error("llm failure: {0}")]
    Llm(#[from] LlmError),
    #[error("unusable directive: {0}")]
    Directive(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolFilter {
    pub agent: Option<AgentName>,
    pub origin: Option<ToolOrigin>,
}

/// Everything a dispatch needs besides the tool and its arguments.
pub struct DispatchContext<'a> {
    pub cluster: &'a dyn ClusterBackend,
    pub sandbox: Option<&'a Sandbox>,
    pub audit: &'a AuditLog,
    pub roles: &'a RoleTable,
    pub role: &'a str,
    pub session_id: Option<&'a str>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct RegistryOptions {
    pub versioning: bool,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        Self { versioning: true }
    }
}

struct Generated {
    script: String,
    created_at: chrono::DateTime<Utc>,
    tool_variable_name: String,
    run_id: Option<String>,
}

pub struct AgentRegistry {
    agents: BTreeMap<AgentName, AgentDescriptor>,
    handlers: HashMap<&'static str, Handler>,
    tools: RwLock<BTreeMap<String, ToolSpec>>,
    generated: RwLock<HashMap<String, Generated>>,
    writer: Mutex<()>,
    store: Option<ToolStore>,
    options: RegistryOptions,
}

impl fmt::Debug for AgentRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentRegistry")
            .field("agents", &self.agents.keys().collect::<Vec<_>>())
            .field("tools", &self.tools.read().len())
            .finish_non_exhaustive()
    }
}

impl AgentRegistry {
    /// Registers the descriptors and installs the builtin tools. Each of the
    /// ten agent names must appear exactly once.
    pub fn new(descriptors: Vec<AgentDescriptor>) -> Result<Self, RegistryError> {
        let mut agents = BTreeMap::new();
        for d in descriptors {
            let name = d.name;
            if agents.insert(name, d).is_some() {
                return Err(RegistryError::DuplicateAgent(name.to_string()));
            }
        }
        if let Some(missing) = AgentName::ALL.iter().find(|a| !agents.contains_key(a)) {
            return Err(RegistryError::MissingAgent(missing.to_string()));
        }
        let mut tools = BTreeMap::new();
        let mut handlers = HashMap::new();
        for b in builtin_tools() {
            handlers.insert(b.name, b.handler);
            tools.insert(
                b.name.to_string(),
                ToolSpec {
                    name: b.name.to_string(),
                    description: b.description.to_string(),
                    input_schema: b.schema,
                    owner_agent: b.agent,
                    origin: ToolOrigin::Builtin,
                    version: 1,
                    artifact: Artifact::Builtin {
                        handler: b.name.to_string(),
                    },
                    category: b.category,
                    llm_produced: false,
                },
            );
        }
        for d in agents.values() {
            for t in &d.tool_names {
                if !tools.contains_key(t) {
                    return Err(RegistryError::UnknownTool(t.clone()));
                }
            }
        }
        Ok(Self {
            agents,
            handlers,
            tools: RwLock::new(tools),
            generated: RwLock::new(HashMap::new()),
            writer: Mutex::new(()),
            store: None,
            options: RegistryOptions::default(),
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(default_descriptors()).expect("default descriptors are complete")
    }

    pub fn with_options(mut self, options: RegistryOptions) -> Self {
        self.options = options;
        self
    }

    /// Attaches persistent storage and loads every tool it holds.
    pub fn with_store(mut self, store: ToolStore) -> Result<Self, RegistryError> {
        {
            let mut tools = self.tools.write();
            let mut generated = self.generated.write();
            for (m, script) in store.load_all()? {
                if tools.get(&m.name).is_some_and(|t| t.origin == ToolOrigin::Builtin) {
                    return Err(RegistryError::NameCollision(m.name));
                }
                generated.insert(
                    m.name.clone(),
                    Generated {
                        script,
                        created_at: m.created_at,
                        tool_variable_name: m.tool_variable_name.clone(),
                        run_id: m.run_id.clone(),
                    },
                );
                tools.insert(m.name.clone(), spec_from_manifest(&m));
            }
        }
        self.store = Some(store);
        Ok(self)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentDescriptor> {
        self.agents.values()
    }

    pub fn agent(&self, name: AgentName) -> &AgentDescriptor {
        &self.agents[&name]
    }

    pub fn tool(&self, name: &str) -> Option<ToolSpec> {
        self.tools.read().get(name).cloned()
    }

    /// Tools usable by an agent: its own builtins plus generated tools it owns.
    pub fn tools_for(&self, agent: AgentName) -> Vec<ToolSpec> {
        self.list_tools(&ToolFilter {
            agent: Some(agent),
            origin: None,
        })
    }

    /// Deterministic order: agent, then name.
    pub fn list_tools(&self, filter: &ToolFilter) -> Vec<ToolSpec> {
        let mut out: Vec<ToolSpec> = self
            .tools
            .read()
            .values()
            .filter(|t| filter.agent.is_none_or(|a| t.owner_agent == a))
            .filter(|t| filter.origin.is_none_or(|o| t.origin == o))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.owner_agent, &a.name).cmp(&(b.owner_agent, &b.name)));
        out
    }

    /// Source of a generated tool.
    pub fn script(&self, name: &str) -> Option<String> {
        self.generated.read().get(name).map(|g| g.script.clone())
    }

    /// One LLM call picks a tool of `agent` for `task`, or declares none.
    pub fn match_tool(
        &self,
        llm: &LlmGateway,
        agent: AgentName,
        task: &str,
        session_id: Option<&str>,
    ) -> Result<MatchOutcome, RegistryError> {
        let tools = self.tools_for(agent);
        let descriptor = self.agent(agent);
        let mut catalog = String::new();
        for t in &tools {
            catalog.push_str(&format!("- {}: {}\n", t.name, t.description));
        }
        let system = format!(
            "{}\nAvailable tools:\n{catalog}\nReply with exactly one block:\n<directive>\ntool: <tool name or none>\n</directive>\nUse `none` if no listed tool can do the task.",
            descriptor.prompt_template
        );
        let mut feedback = String::new();
        let mut last = RegistryError::Directive(String::new());
        for _ in 0..=DIRECTIVE_RETRIES {
            let user = format!("[tool-select:{agent}]\nTask: {task}{feedback}");
            let req = llm
                .request(Purpose::Route, vec![ChatMessage::system(&system), ChatMessage::user(user)])
                .with_session(session_id);
            let content = llm.complete(&req)?.content;
            let selected = match directive::parse_single(&content).and_then(|d| {
                d.expect_keys(&["tool"], &[])?;
                Ok(d.require("tool")?.to_string())
            }) {
                Ok(s) => s,
                Err(e) => {
                    feedback = format!("\nYour previous reply was rejected: {e}");
                    last = RegistryError::Directive(e.to_string());
                    continue;
                }
            };
            if selected.eq_ignore_ascii_case("none") {
                return Ok(MatchOutcome::NoMatch);
            }
            if let Some(t) = tools.iter().find(|t| t.name == selected) {
                return Ok(MatchOutcome::Tool(Box::new(t.clone())));
            }
            feedback = format!("\nYour previous reply named {selected:?}, which is not in the tool list.");
            last = RegistryError::InvalidSelection {
                agent: agent.to_string(),
                selected,
            };
        }
        Err(last)
    }

    /// Extracts argument sets for `tool` from the task text. Several
    /// directive blocks yield several argument sets.
    pub fn extract_args(
        &self,
        llm: &LlmGateway,
        tool: &ToolSpec,
        task: &str,
        session_id: Option<&str>,
    ) -> Result<Vec<Map<String, Value>>, RegistryError> {
        if tool.input_schema.is_empty() {
            return Ok(vec![Map::new()]);
        }
        let mut schema = String::new();
        for f in &tool.input_schema {
            let req = if f.required { "required" } else { "optional" };
            schema.push_str(&format!("- {} ({}, {req})\n", f.name, f.ty.as_str()));
        }
        let system = format!(
            "Extract arguments for the tool `{}` ({}).\nFields:\n{schema}\nReply with one <directive> block per invocation, one `field: value` line per argument. Lists are comma-separated. Omit unknown optional fields.",
            tool.name, tool.description
        );
        let mut feedback = String::new();
        let mut last = String::new();
        for _ in 0..=DIRECTIVE_RETRIES {
            let user = format!("[tool-args:{}]\nTask: {task}{feedback}", tool.name);
            let req = llm
                .request(Purpose::Route, vec![ChatMessage::system(&system), ChatMessage::user(user)])
                .with_session(session_id);
            let content = llm.complete(&req)?.content;
            match directive::parse_all(&content)
                .map_err(|e| e.to_string())
                .and_then(|blocks| blocks.iter().map(|d| coerce_directive(tool, d)).collect())
            {
                Ok(sets) => return Ok(sets),
                Err(e) => {
                    last = e;
                    feedback = format!("\nYour previous reply was rejected: {last}");
                }
            }
        }
        Err(RegistryError::Directive(last))
    }

    /// Runs a tool. Schema violations are returned as errors; execution
    /// failures and permission denials become `status=error` results.
    pub fn dispatch(
        &self,
        tool: &ToolSpec,
        args: &Map<String, Value>,
        ctx: &DispatchContext<'_>,
    ) -> Result<ToolResult, RegistryError> {
        validate_args(tool, args)?;
        let payload = json!({"tool": tool.name, "args": args, "role": ctx.role});
        let actor = format!("agent:{}", tool.owner_agent);
        let audit = |action, payload: Value, outcome: &str| {
            let mut e = AuditEntry::new(action, &actor, &tool.name, payload, outcome);
            if let Some(s) = ctx.session_id {
                e = e.session(s);
            }
            ctx.audit.append(e).map_err(|e| RegistryError::StorageFault(e.to_string()))
        };

        let allowed = ctx
            .roles
            .authorize(ctx.role, tool.category)
            .map_err(|e| RegistryError::StorageFault(e.to_string()));
        let result = match allowed {
            Ok(true) => {
                audit(AuditAction::ToolDispatched, payload, "dispatched")?;
                self.run(tool, args, ctx)
            }
            Ok(false) => {
                audit(AuditAction::ToolDispatched, payload, "denied")?;
                ToolResult::error(
                    format!("role {} may not perform {} operations", ctx.role, tool.category),
                    ctx.step,
                )
            }
            Err(e) => {
                audit(AuditAction::ToolDispatched, payload, "denied")?;
                ToolResult::error(e.to_string(), ctx.step)
            }
        };
        let outcome = if result.is_success() { "success" } else { "error" };
        audit(AuditAction::ToolResult, result.envelope(), outcome)?;
        Ok(result)
    }

    fn run(&self, tool: &ToolSpec, args: &Map<String, Value>, ctx: &DispatchContext<'_>) -> ToolResult {
        match &tool.artifact {
            Artifact::Builtin { handler } => match self.handlers.get(handler.as_str()) {
                Some(h) => match h(ctx.cluster, args) {
                    Ok(data) => ToolResult::success(data, ctx.step),
                    Err(e) => ToolResult::error(e.to_string(), ctx.step),
                },
                None => ToolResult::error(format!("no handler {handler}"), ctx.step),
            },
            Artifact::Script { .. } => {
                let Some(sandbox) = ctx.sandbox else {
                    return ToolResult::error("no sandbox configured for generated tools", ctx.step);
                };
                let Some(script) = self.script(&tool.name) else {
                    return ToolResult::error(format!("script for {} not loaded", tool.name), ctx.step);
                };
                let cluster = match ctx.cluster.snapshot() {
                    Ok(s) => s,
                    Err(e) => return ToolResult::error(e.to_string(), ctx.step),
                };
                match sandbox.execute(&script, &json!({"args": args, "cluster": cluster})) {
                    Ok(r) => script_result(&r, ctx.step),
                    Err(e) => ToolResult::error(e.to_string(), ctx.step),
                }
            }
        }
    }

    /// Adds a generated tool. Identical content is a no-op; changed content
    /// bumps the version (or collides when versioning is off).
    pub fn register_generated(
        &self,
        metadata: &ToolMetadata,
        script: &str,
        owner: Option<AgentName>,
        category: VerbCategory,
        run_id: Option<&str>,
        audit: Option<&AuditLog>,
    ) -> Result<ToolSpec, RegistryError> {
        let name = metadata.function_name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(RegistryError::SchemaViolation {
                tool: name.to_string(),
                reason: "tool name must be a non-empty identifier".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for f in &metadata.input_schema {
            if !seen.insert(f.name.as_str()) {
                return Err(RegistryError::SchemaViolation {
                    tool: name.to_string(),
                    reason: format!("field {} declared twice", f.name),
                });
            }
        }
        let digest = sha256_hex(script.as_bytes());

        let _w = self.writer.lock();
        let version = match self.tools.read().get(name) {
            Some(t) if t.origin == ToolOrigin::Builtin => {
                return Err(RegistryError::NameCollision(name.to_string()));
            }
            Some(t) => match &t.artifact {
                Artifact::Script { digest: d, .. } if *d == digest => return Ok(t.clone()),
                _ if !self.options.versioning => return Err(RegistryError::NameCollision(name.to_string())),
                _ => t.version + 1,
            },
            None => 1,
        };
        let manifest = Manifest {
            name: name.to_string(),
            description: metadata.description.clone(),
            schema: metadata.input_schema.clone(),
            owner_agent: owner.unwrap_or(AgentName::CodeGenerator),
            origin: "generated".into(),
            version,
            content_digest: digest,
            created_at: Utc::now(),
            llm_produced: true,
            category,
            tool_variable_name: metadata.tool_variable_name.clone(),
            run_id: run_id.map(str::to_string),
        };
        if let Some(store) = &self.store {
            store.persist(&manifest, script)?;
        }
        let spec = spec_from_manifest(&manifest);
        self.generated.write().insert(
            spec.name.clone(),
            Generated {
                script: script.to_string(),
                created_at: manifest.created_at,
                tool_variable_name: manifest.tool_variable_name.clone(),
                run_id: manifest.run_id.clone(),
            },
        );
        self.tools.write().insert(spec.name.clone(), spec.clone());
        if let Some(audit) = audit {
            audit
                .append(AuditEntry::new(
                    AuditAction::ToolRegistered,
                    "agent:CodeGenerator",
                    &spec.name,
                    serde_json::to_value(&manifest).unwrap_or_default(),
                    format!("version {version}"),
                ))
                .map_err(|e| RegistryError::StorageFault(e.to_string()))?;
        }
        Ok(spec)
    }

    /// Manifest view of a generated tool, as persisted.
    pub fn manifest(&self, name: &str) -> Option<Manifest> {
        let spec = self.tool(name)?;
        let generated = self.generated.read();
        let g = generated.get(name)?;
        let Artifact::Script { digest, .. } = &spec.artifact else {
            return None;
        };
        Some(Manifest {
            name: spec.name.clone(),
            description: spec.description.clone(),
            schema: spec.input_schema.clone(),
            owner_agent: spec.owner_agent,
            origin: "generated".into(),
            version: spec.version,
            content_digest: digest.clone(),
            created_at: g.created_at,
            llm_produced: spec.llm_produced,
            category: spec.category,
            tool_variable_name: g.tool_variable_name.clone(),
            run_id: g.run_id.clone(),
        })
    }
}

fn spec_from_manifest(m: &Manifest) -> ToolSpec {
    ToolSpec {
        name: m.name.clone(),
        description: m.description.clone(),
        input_schema: m.schema.clone(),
        owner_agent: m.owner_agent,
        origin: ToolOrigin::Generated,
        version: m.version,
        artifact: Artifact::Script {
            path: ToolStore::relative_script_path(&m.name, m.version).to_string_lossy().into_owned(),
            digest: m.content_digest.clone(),
        },
        category: m.category,
        llm_produced: m.llm_produced,
    }
}

fn coerce_directive(tool: &ToolSpec, d: &Directive) -> Result<Map<String, Value>, String> {
    let mut out = Map::new();
    for (key, raw) in d.fields() {
        let field = tool
            .field(key)
            .ok_or_else(|| DirectiveError::UnknownKey(key.clone()).to_string())?;
        if raw.is_empty() {
            continue;
        }
        let v = field
            .ty
            .coerce(raw)
            .ok_or_else(|| format!("`{key}` is not a valid {}: {raw:?}", field.ty.as_str()))?;
        out.insert(key.clone(), v);
    }
    Ok(out)
}

/// Required fields present, no unknown fields, every value of its type.
pub fn validate_args(tool: &ToolSpec, args: &Map<String, Value>) -> Result<(), RegistryError> {
    let violation = |reason: String| RegistryError::SchemaViolation {
        tool: tool.name.clone(),
        reason,
    };
    for (k, v) in args {
        let f = tool.field(k).ok_or_else(|| violation(format!("unknown field `{k}`")))?;
        if !f.ty.matches(v) {
            return Err(violation(format!("`{k}` must be {}", f.ty.as_str())));
        }
    }
    for f in tool.input_schema.iter().filter(|f| f.required) {
        if !args.contains_key(&f.name) {
            return Err(violation(format!("missing required field `{}`", f.name)));
        }
    }
    Ok(())
}

/// Normalizes a sandbox run of a generated tool.
fn script_result(r: &crate::sandbox::SandboxResult, step: u64) -> ToolResult {
    if !r.violations.is_empty() {
        return ToolResult::error(format!("sandbox violations: {:?}", r.violations), step);
    }
    if !r.exit_ok {
        return ToolResult::error(format!("script exited with {:?}: {}", r.exit_code, r.stderr.trim()), step);
    }
    let doc: Value = match serde_json::from_str(r.stdout.trim()) {
        Ok(v) => v,
        Err(e) => return ToolResult::error(format!("script output is not JSON: {e}"), step),
    };
    match (doc.get("status").and_then(Value::as_str), doc.get("data")) {
        (Some("success"), Some(data)) => ToolResult::success(data.clone(), step),
        (Some(_), Some(data)) => ToolResult {
            status: ToolStatus::Error,
            data: data.clone(),
            error_message: Some(match data {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
            produced_at_step: step,
        },
        _ => ToolResult::error("script output lacks the status/data envelope", step),
    }
}
