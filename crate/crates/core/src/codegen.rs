//! Tool synthesis: generate, test, evaluate, describe, register, with a
//! bounded retry loop.
//!
//! ```text
//! generate_code -> test_code -> evaluate_test_results -+-> generate_metadata -> register_tool -> finish
//!       ^                                              |            |               |
//!       +------------------ handle_failure <-----------+------------+---------------+--> finish
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::directive::{self, Directive};
use crate::governance::{AuditAction, AuditEntry, AuditLog};
use crate::kube::{ClusterBackend, VerbCategory};
use crate::llm::{ChatMessage, LlmError, LlmGateway, Purpose};
use crate::memory::{canonical_json, CheckpointCause, CheckpointStore};
use crate::registry::{AgentName, AgentRegistry, FieldSpec, RegistryError, SemanticType, ToolMetadata, ToolSpec};
use crate::sandbox::{static_scan, Sandbox, SandboxError, SandboxPolicy, SandboxResult, Violation};

pub const BEGIN_MARKER: &str = "# ---BEGIN TOOL---";
pub const END_MARKER: &str = "# ---END TOOL---";
pub const MAX_ATTEMPTS: u32 = 3;

static DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").expect("static regex"));
static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_+-]*\n(.*?)```").expect("static regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScript {
    pub source_text: String,
    pub task_description: String,
    pub attempt: u32,
    pub entrypoint_name: String,
    /// Arguments used for the sandbox test run.
    pub test_args: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NotParseableOutput,
    SchemaMismatch,
    MissingMarkers,
    PolicyViolation,
    RuntimeError,
    Timeout,
    SemanticMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub failure_reasons: Vec<FailureReason>,
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GenerateCode,
    TestCode,
    EvaluateTestResults,
    GenerateMetadata,
    RegisterTool,
    HandleFailure,
    Finish,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GenerateCode => "generate_code",
            Self::TestCode => "test_code",
            Self::EvaluateTestResults => "evaluate_test_results",
            Self::GenerateMetadata => "generate_metadata",
            Self::RegisterTool => "register_tool",
            Self::HandleFailure => "handle_failure",
            Self::Finish => "finish",
        }
    }

    /// Edges of the stage graph.
    pub fn successors(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            GenerateCode => &[TestCode, HandleFailure],
            TestCode => &[EvaluateTestResults, HandleFailure],
            EvaluateTestResults => &[GenerateMetadata, HandleFailure],
            GenerateMetadata => &[RegisterTool, HandleFailure],
            RegisterTool => &[Finish, HandleFailure],
            HandleFailure => &[GenerateCode, Finish],
            Finish => &[],
        }
    }
}

/// Whether `path` is a walk through the stage graph from its entry point.
pub fn is_valid_path(path: &[Stage]) -> bool {
    match path {
        [] => false,
        [Stage::Finish] => true,
        [first, ..] if *first != Stage::GenerateCode => false,
        _ => {
            path.windows(2).all(|w| w[0].successors().contains(&w[1]))
                && path.last() == Some(&Stage::Finish)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Registered,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub attempt: u32,
    pub stage: Stage,
    pub reasons: Vec<FailureReason>,
    pub error: Option<String>,
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub task: String,
    pub stage: Stage,
    pub path: Vec<Stage>,
    pub attempts_used: u32,
    pub outcome: Option<RunOutcome>,
    pub failures: Vec<FailureRecord>,
    /// `attempt-N/<name>` → record.
    pub artifacts: BTreeMap<String, Value>,
    pub tool: Option<ToolSpec>,
    pub abort_cause: Option<String>,
}

impl PipelineRun {
    fn new(run_id: String, task: &str) -> Self {
        Self {
            run_id,
            task: task.to_string(),
            stage: Stage::GenerateCode,
            path: Vec::new(),
            attempts_used: 0,
            outcome: None,
            failures: Vec::new(),
            artifacts: BTreeMap::new(),
            tool: None,
            abort_cause: None,
        }
    }

    pub fn registered(&self) -> bool {
        self.outcome == Some(RunOutcome::Registered)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error("model returned no script")]
    EmptyGeneration,
    #[error("llm failure: {0}")]
    Llm(#[from] LlmError),
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("artifact storage fault: {0}")]
    StorageFault(String),
}

impl CodegenError {
    /// Generation and evaluation faults are worth another attempt;
    /// infrastructure faults are not.
    pub fn retryable(&self) -> bool {
        match self {
            Self::EmptyGeneration | Self::MetadataMismatch(_) => true,
            Self::Registry(RegistryError::NameCollision(_) | RegistryError::SchemaViolation { .. }) => true,
            Self::Llm(LlmError::MalformedResponse(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticMode {
    Off,
    #[default]
    Advisory,
    Strict,
}

#[derive(Debug, Clone)]
pub struct CodegenConfig {
    pub max_attempts: u32,
    pub semantic: SemanticMode,
    pub artifacts_dir: Option<PathBuf>,
}

impl Default for CodegenConfig {
    fn default() -> Self {
        Self {
            max_attempts: MAX_ATTEMPTS,
            semantic: SemanticMode::Advisory,
            artifacts_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approval {
    NotRequired,
    Granted,
    Denied,
}

/// Collaborators for one pipeline run.
pub struct PipelineContext<'a> {
    pub llm: &'a LlmGateway,
    pub registry: &'a AgentRegistry,
    pub cluster: &'a dyn ClusterBackend,
    pub sandbox: Option<&'a Sandbox>,
    pub audit: &'a AuditLog,
    pub checkpoints: Option<&'a dyn CheckpointStore>,
    pub session_id: Option<&'a str>,
    /// Agent whose tool search came up empty; owns the new tool.
    pub owner: Option<AgentName>,
    /// Short description of the cluster and conversation so far.
    pub context_summary: &'a str,
}

const CODEGEN_PROMPT: &str = "You write one self-contained Python tool for a Kubernetes operations assistant.
Rules:
- Define exactly one entrypoint function between the lines `# ---BEGIN TOOL---` and `# ---END TOOL---`.
- Import only json and sys. No subprocesses, sockets, environment access or file writes.
- Read one JSON document from stdin: {\"args\": {...}, \"cluster\": {\"pods\": [...], \"jobs\": [...], ...}}.
- Catch exceptions and always print exactly one JSON document {\"status\": \"success\" | \"error\", \"data\": ...}.
Reply with the script inside <script>...</script>, then a <directive> block with test arguments (one `name: value` line each; empty block for none).";

const METADATA_PROMPT: &str = "Describe the tool below. Reply with exactly one block:
<directive>
function_name: <entrypoint function name>
tool_variable_name: <snake_case variable name>
description: <one sentence>
schema: <name:type:required|optional, ...> with type in text, integer, boolean, list-of-text (empty for none)
category: <verb category, default Read>
</directive>";

/// Script body from a `<script>` block or the first fenced code block.
pub fn extract_script(response: &str) -> Option<String> {
    let from_tag = directive::blocks(response, "script")
        .ok()
        .and_then(|b| b.first().map(|s| s.to_string()));
    let body = from_tag.or_else(|| FENCE.captures(response).map(|c| c[1].to_string()))?;
    let body = body.trim_matches('\n').to_string();
    (!body.trim().is_empty()).then_some(body)
}

/// Entrypoint: first `def` between the markers, else the first `def` at all.
pub fn entrypoint(source: &str) -> Option<String> {
    let inside = marked_region(source);
    DEF.captures(inside.unwrap_or(source)).map(|c| c[1].to_string())
}

fn marked_region(source: &str) -> Option<&str> {
    let start = source.find(BEGIN_MARKER)? + BEGIN_MARKER.len();
    let end = source[start..].find(END_MARKER)? + start;
    Some(&source[start..end])
}

pub fn has_markers(source: &str) -> bool {
    marked_region(source).is_some_and(|r| DEF.is_match(r))
}

fn infer_value(raw: &str) -> Value {
    if let Ok(n) = raw.parse::<i64>() {
        return json!(n);
    }
    match raw {
        "true" => json!(true),
        "false" => json!(false),
        _ => json!(raw),
    }
}

fn test_args(response: &str) -> Map<String, Value> {
    let Ok(blocks) = directive::blocks(response, directive::DIRECTIVE_TAG) else {
        return Map::new();
    };
    let Some(body) = blocks.first() else {
        return Map::new();
    };
    Directive::parse_body(body)
        .map(|d| {
            d.fields()
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, v)| (k.clone(), infer_value(v)))
                .collect()
        })
        .unwrap_or_default()
}

fn retry_note(failures: &[FailureRecord]) -> String {
    let Some(last) = failures.last() else {
        return String::new();
    };
    let reasons: Vec<String> = last
        .reasons
        .iter()
        .filter_map(|r| serde_json::to_value(r).ok())
        .filter_map(|v| v.as_str().map(str::to_string))
        .collect();
    let mut note = format!("\nPrevious attempt {} failed at {}", last.attempt, last.stage.as_str());
    if !reasons.is_empty() {
        note.push_str(&format!(": {}", reasons.join(", ")));
    }
    if let Some(e) = &last.error {
        note.push_str(&format!(" ({e})"));
    }
    note.push_str(". Fix these problems.");
    note
}

pub fn generate_code(
    llm: &LlmGateway,
    task: &str,
    context: &str,
    attempt: u32,
    prior: &[FailureRecord],
    session_id: Option<&str>,
) -> Result<(CandidateScript, String), CodegenError> {
    let user = format!(
        "[codegen]\nTask: {task}\nAttempt: {attempt}\nContext: {context}{}",
        retry_note(prior)
    );
    let req = llm
        .request(Purpose::Codegen, vec![ChatMessage::system(CODEGEN_PROMPT), ChatMessage::user(&user)])
        .with_session(session_id);
    let content = llm.complete(&req)?.content;
    let source = extract_script(&content).ok_or(CodegenError::EmptyGeneration)?;
    Ok((
        CandidateScript {
            entrypoint_name: entrypoint(&source).unwrap_or_default(),
            source_text: source,
            task_description: task.to_string(),
            attempt,
            test_args: test_args(&content),
        },
        user,
    ))
}

pub fn test_code(
    sandbox: &Sandbox,
    script: &CandidateScript,
    cluster: &Value,
) -> Result<SandboxResult, CodegenError> {
    sandbox
        .execute(&script.source_text, &json!({"args": script.test_args, "cluster": cluster}))
        .map_err(|e| match e {
            SandboxError::Unavailable(m) | SandboxError::InvalidPolicy(m) => CodegenError::SandboxUnavailable(m),
        })
}

/// Structural and policy checks over source text and a finished run. Never
/// executes anything.
pub fn evaluate_test_results(source: &str, result: &SandboxResult, policy: &SandboxPolicy) -> Verdict {
    let mut reasons = Vec::new();
    let mut notes = Vec::new();
    let timed_out = result.violations.contains(&Violation::Timeout);
    if timed_out {
        reasons.push(FailureReason::Timeout);
        notes.push(format!("terminated after {} ms", result.duration_ms));
    } else if !result.exit_ok {
        reasons.push(FailureReason::RuntimeError);
        notes.push(format!("exit code {:?}", result.exit_code));
    } else {
        match serde_json::from_str::<Value>(result.stdout.trim()) {
            Err(e) => {
                reasons.push(FailureReason::NotParseableOutput);
                notes.push(format!("stdout is not one JSON document: {e}"));
            }
            Ok(doc) => {
                let status = doc.get("status").and_then(Value::as_str);
                if !doc.is_object() || doc.get("data").is_none() || status.is_none() {
                    reasons.push(FailureReason::SchemaMismatch);
                    notes.push("output lacks the status/data envelope".into());
                } else if !matches!(status, Some("success" | "error")) {
                    reasons.push(FailureReason::SchemaMismatch);
                    notes.push(format!("status {status:?} is neither success nor error"));
                } else if status == Some("error") {
                    reasons.push(FailureReason::RuntimeError);
                    notes.push(format!("tool reported error: {}", doc["data"]));
                }
            }
        }
    }
    if !has_markers(source) {
        reasons.push(FailureReason::MissingMarkers);
        notes.push("entrypoint is not delimited by the tool markers".into());
    }
    let findings = static_scan(source, policy);
    let runtime: Vec<&Violation> = result
        .violations
        .iter()
        .filter(|v| !matches!(v, Violation::Timeout))
        .collect();
    if !findings.is_empty() || !runtime.is_empty() {
        reasons.push(FailureReason::PolicyViolation);
        for f in &findings {
            notes.push(format!("denied token `{}` at {}:{}", f.token, f.line, f.column));
        }
        if !runtime.is_empty() {
            notes.push(format!("sandbox violations: {runtime:?}"));
        }
    }
    Verdict {
        passed: reasons.is_empty(),
        failure_reasons: reasons,
        notes: notes.join("; "),
    }
}

fn parse_schema(text: &str) -> Result<Vec<FieldSpec>, String> {
    let mut out = Vec::new();
    for item in directive::split_list(text) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        let (name, ty, req) = match parts.as_slice() {
            [n, t] => (*n, *t, "optional"),
            [n, t, r] => (*n, *t, *r),
            _ => return Err(format!("bad schema item {item:?}")),
        };
        let ty: SemanticType = ty.parse()?;
        let required = match req {
            "required" => true,
            "optional" => false,
            other => return Err(format!("bad required flag {other:?}")),
        };
        if name.is_empty() || out.iter().any(|f: &FieldSpec| f.name == name) {
            return Err(format!("bad or duplicate field name {name:?}"));
        }
        out.push(FieldSpec {
            name: name.to_string(),
            ty,
            required,
        });
    }
    Ok(out)
}

pub fn generate_metadata(
    llm: &LlmGateway,
    script: &CandidateScript,
    session_id: Option<&str>,
) -> Result<(ToolMetadata, VerbCategory), CodegenError> {
    let user = format!("[metadata]\nTask: {}\nScript:\n{}", script.task_description, script.source_text);
    let req = llm
        .request(Purpose::Metadata, vec![ChatMessage::system(METADATA_PROMPT), ChatMessage::user(user)])
        .with_session(session_id);
    let content = llm.complete(&req)?.content;
    let mismatch = |e: String| CodegenError::MetadataMismatch(e);
    let d = directive::parse_single(&content).map_err(|e| mismatch(e.to_string()))?;
    d.expect_keys(&["function_name", "tool_variable_name", "description", "schema", "category"], &[])
        .map_err(|e| mismatch(e.to_string()))?;
    let function_name = d.require("function_name").map_err(|e| mismatch(e.to_string()))?;
    if function_name != script.entrypoint_name {
        return Err(mismatch(format!(
            "metadata names {function_name:?} but the entrypoint is {:?}",
            script.entrypoint_name
        )));
    }
    let description = d.require("description").map_err(|e| mismatch(e.to_string()))?;
    let input_schema = parse_schema(d.get("schema").unwrap_or("")).map_err(mismatch)?;
    let category = match d.get("category") {
        Some(c) => c.parse::<VerbCategory>().map_err(|e| mismatch(e.to_string()))?,
        None => VerbCategory::Read,
    };
    Ok((
        ToolMetadata {
            function_name: function_name.to_string(),
            input_schema,
            tool_variable_name: d.get("tool_variable_name").unwrap_or(function_name).to_string(),
            description: description.to_string(),
        },
        category,
    ))
}

/// Advisory check that the output fits the task. `None` when the check
/// itself could not run.
pub fn semantic_check(
    llm: &LlmGateway,
    task: &str,
    output: &str,
    session_id: Option<&str>,
) -> Option<(bool, String)> {
    let user = format!("[semantic-check]\nTask: {task}\nOutput: {output}");
    let req = llm
        .request(
            Purpose::Validate,
            vec![
                ChatMessage::system(
                    "Does the output answer the task? Reply <directive>\naligned: yes|no\nreason: ...\n</directive>",
                ),
                ChatMessage::user(user),
            ],
        )
        .with_session(session_id);
    let content = llm.complete(&req).ok()?.content;
    let d = directive::parse_single(&content).ok()?;
    let aligned = matches!(d.get("aligned")?.to_ascii_lowercase().as_str(), "yes" | "true");
    Some((aligned, d.get("reason").unwrap_or("").to_string()))
}

/// Failure routing: retry while attempts remain and the fault is retryable.
pub fn handle_failure(attempts_used: u32, max_attempts: u32, retryable: bool) -> bool {
    retryable && attempts_used < max_attempts
}

#[derive(Debug, Clone)]
pub struct CodegenAgent {
    config: CodegenConfig,
}

struct Recorder<'a, 'b> {
    ctx: &'a PipelineContext<'b>,
    dir: Option<PathBuf>,
    seq: u64,
}

impl Recorder<'_, '_> {
    fn artifact(&self, run: &mut PipelineRun, attempt: u32, name: &str, value: Value) -> Result<(), CodegenError> {
        if let Some(dir) = &self.dir {
            let dir = dir.join(format!("attempt-{attempt}"));
            std::fs::create_dir_all(&dir).map_err(|e| CodegenError::StorageFault(e.to_string()))?;
            let body = match &value {
                Value::String(s) => s.clone(),
                other => serde_json::to_string_pretty(other).unwrap_or_default(),
            };
            std::fs::write(dir.join(name), body).map_err(|e| CodegenError::StorageFault(e.to_string()))?;
        }
        run.artifacts.insert(format!("attempt-{attempt}/{name}"), value);
        Ok(())
    }

    fn enter(&mut self, run: &mut PipelineRun, stage: Stage, outcome: &str) -> Result<(), CodegenError> {
        run.stage = stage;
        run.path.push(stage);
        let mut e = AuditEntry::new(
            AuditAction::CodegenStage,
            "agent:CodeGenerator",
            stage.as_str(),
            json!({"run_id": run.run_id, "attempt": run.attempts_used}),
            outcome,
        );
        if let Some(s) = self.ctx.session_id {
            e = e.session(s);
        }
        self.ctx
            .audit
            .append(e)
            .map_err(|e| CodegenError::StorageFault(e.to_string()))?;
        if let Some(store) = self.ctx.checkpoints {
            let cause = if stage == Stage::Finish {
                CheckpointCause::Completion
            } else {
                CheckpointCause::NodeBoundary
            };
            let blob = canonical_json(run).map_err(|e| CodegenError::StorageFault(e.to_string()))?;
            store
                .save(&format!("codegen:{}", run.run_id), self.seq, stage.as_str(), cause, blob)
                .map_err(|e| CodegenError::StorageFault(e.to_string()))?;
            self.seq += 1;
        }
        Ok(())
    }
}

enum AttemptError {
    Verdict(Verdict),
    Fault(Stage, CodegenError),
}

impl CodegenAgent {
    pub fn new(config: CodegenConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &CodegenConfig {
        &self.config
    }

    pub fn artifacts_dir(&self) -> Option<&Path> {
        self.config.artifacts_dir.as_deref()
    }

    pub fn run_pipeline(&self, ctx: &PipelineContext<'_>, task: &str, approval: Approval) -> PipelineRun {
        let run_id = uuid::Uuid::new_v4().to_string();
        self.run_pipeline_with_id(ctx, task, approval, run_id)
    }

    /// Runs the stage graph to `finish`. Faults end as `outcome=aborted`
    /// with the cause recorded; this never panics on script behavior.
    pub fn run_pipeline_with_id(
        &self,
        ctx: &PipelineContext<'_>,
        task: &str,
        approval: Approval,
        run_id: String,
    ) -> PipelineRun {
        let mut run = PipelineRun::new(run_id, task);
        let mut rec = Recorder {
            ctx,
            dir: self.config.artifacts_dir.as_ref().map(|d| d.join(&run.run_id)),
            seq: 0,
        };
        let result = self.drive(&mut rec, &mut run, task, approval);
        if let Err(e) = result {
            // Storage faults while recording: still end in a consistent state.
            run.outcome = Some(RunOutcome::Aborted);
            run.abort_cause = Some(e.to_string());
            if run.path.last() != Some(&Stage::Finish) {
                run.stage = Stage::Finish;
                run.path.push(Stage::Finish);
            }
        }
        run
    }

    fn drive(
        &self,
        rec: &mut Recorder<'_, '_>,
        run: &mut PipelineRun,
        task: &str,
        approval: Approval,
    ) -> Result<(), CodegenError> {
        if approval == Approval::Denied {
            run.outcome = Some(RunOutcome::Aborted);
            run.abort_cause = Some("approval denied".into());
            return rec.enter(run, Stage::Finish, "aborted");
        }
        if task.trim().is_empty() {
            run.outcome = Some(RunOutcome::Aborted);
            run.abort_cause = Some("empty task".into());
            return rec.enter(run, Stage::Finish, "aborted");
        }
        let max = self.config.max_attempts.clamp(1, MAX_ATTEMPTS);
        loop {
            run.attempts_used += 1;
            let attempt = run.attempts_used;
            let failure = match self.attempt(rec, run, task, attempt)? {
                Ok(spec) => {
                    run.tool = Some(spec);
                    run.outcome = Some(RunOutcome::Registered);
                    return rec.enter(run, Stage::Finish, "registered");
                }
                Err(f) => f,
            };
            let record = match failure {
                AttemptError::Verdict(v) => FailureRecord {
                    attempt,
                    stage: Stage::EvaluateTestResults,
                    reasons: v.failure_reasons,
                    error: Some(v.notes),
                    retryable: true,
                },
                AttemptError::Fault(stage, e) => FailureRecord {
                    attempt,
                    stage,
                    reasons: Vec::new(),
                    retryable: e.retryable(),
                    error: Some(e.to_string()),
                },
            };
            let retry = handle_failure(attempt, max, record.retryable);
            rec.enter(run, Stage::HandleFailure, if retry { "retry" } else { "abort" })?;
            rec.artifact(run, attempt, "failure.json", serde_json::to_value(&record).unwrap_or_default())?;
            run.failures.push(record);
            if !retry {
                run.outcome = Some(RunOutcome::Aborted);
                run.abort_cause = run.failures.last().and_then(|f| f.error.clone());
                return rec.enter(run, Stage::Finish, "aborted");
            }
        }
    }

    /// One generate→register pass. The outer error is a recording fault.
    fn attempt(
        &self,
        rec: &mut Recorder<'_, '_>,
        run: &mut PipelineRun,
        task: &str,
        attempt: u32,
    ) -> Result<Result<ToolSpec, AttemptError>, CodegenError> {
        let ctx = rec.ctx;
        rec.enter(run, Stage::GenerateCode, "started")?;
        let (script, prompt) = match generate_code(
            ctx.llm,
            task,
            ctx.context_summary,
            attempt,
            &run.failures,
            ctx.session_id,
        ) {
            Ok(s) => s,
            Err(e) => return Ok(Err(AttemptError::Fault(Stage::GenerateCode, e))),
        };
        rec.artifact(run, attempt, "prompt.txt", json!(prompt))?;
        rec.artifact(run, attempt, "tool.py", json!(script.source_text))?;

        rec.enter(run, Stage::TestCode, "started")?;
        let Some(sandbox) = ctx.sandbox else {
            return Ok(Err(AttemptError::Fault(
                Stage::TestCode,
                CodegenError::SandboxUnavailable("no sandbox configured".into()),
            )));
        };
        let snapshot = match ctx.cluster.snapshot() {
            Ok(s) => s,
            Err(e) => {
                return Ok(Err(AttemptError::Fault(
                    Stage::TestCode,
                    CodegenError::SandboxUnavailable(format!("cluster snapshot: {e}")),
                )))
            }
        };
        let result = match test_code(sandbox, &script, &snapshot) {
            Ok(r) => r,
            Err(e) => return Ok(Err(AttemptError::Fault(Stage::TestCode, e))),
        };
        rec.artifact(run, attempt, "sandbox.json", serde_json::to_value(&result).unwrap_or_default())?;

        rec.enter(run, Stage::EvaluateTestResults, "started")?;
        let mut verdict = evaluate_test_results(&script.source_text, &result, sandbox.policy());
        if verdict.passed && self.config.semantic != SemanticMode::Off {
            match semantic_check(ctx.llm, task, result.stdout.trim(), ctx.session_id) {
                Some((true, _)) => {}
                Some((false, why)) => {
                    verdict.notes = format!("semantic check disagrees: {why}");
                    if self.config.semantic == SemanticMode::Strict {
                        verdict.passed = false;
                        verdict.failure_reasons.push(FailureReason::SemanticMismatch);
                    }
                }
                None => verdict.notes = "semantic check unavailable".into(),
            }
        }
        rec.artifact(run, attempt, "verdict.json", serde_json::to_value(&verdict).unwrap_or_default())?;
        if !verdict.passed {
            return Ok(Err(AttemptError::Verdict(verdict)));
        }

        rec.enter(run, Stage::GenerateMetadata, "started")?;
        let (metadata, category) = match generate_metadata(ctx.llm, &script, ctx.session_id) {
            Ok(m) => m,
            Err(e) => return Ok(Err(AttemptError::Fault(Stage::GenerateMetadata, e))),
        };
        rec.artifact(run, attempt, "metadata.json", serde_json::to_value(&metadata).unwrap_or_default())?;

        rec.enter(run, Stage::RegisterTool, "started")?;
        match ctx.registry.register_generated(
            &metadata,
            &script.source_text,
            ctx.owner,
            category,
            Some(&run.run_id),
            Some(ctx.audit),
        ) {
            Ok(spec) => Ok(Ok(spec)),
            Err(e) => Ok(Err(AttemptError::Fault(Stage::RegisterTool, e.into()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "import json, sys\n# ---BEGIN TOOL---\ndef list_failed_jobs():\n    return 1\n# ---END TOOL---\n";

    #[test]
    fn script_extraction() {
        let r = format!("Here you go\n<script>\n{GOOD}</script>\n<directive>\nnamespace: demo\nlimit: 3\n</directive>");
        let s = extract_script(&r).unwrap();
        assert!(s.starts_with("import json"));
        assert_eq!(entrypoint(&s).as_deref(), Some("list_failed_jobs"));
        assert_eq!(test_args(&r), serde_json::from_value::<Map<String, Value>>(json!({"namespace": "demo", "limit": 3})).unwrap());
        let fenced = format!("```python\n{GOOD}```");
        assert_eq!(extract_script(&fenced).unwrap(), GOOD.trim_end_matches('\n'));
        assert_eq!(extract_script("no code here"), None);
        assert_eq!(extract_script("<script>\n  \n</script>"), None);
    }

    #[test]
    fn markers() {
        assert!(has_markers(GOOD));
        assert!(!has_markers("def f():\n    pass\n"));
        assert!(!has_markers("# ---END TOOL---\ndef f(): pass\n# ---BEGIN TOOL---\n"));
    }

    #[test]
    fn schema_items() {
        let s = parse_schema("namespace:text:required, limit:integer:optional, all:boolean").unwrap();
        assert_eq!(s.len(), 3);
        assert!(s[0].required && !s[1].required && !s[2].required);
        assert!(parse_schema("x:tensor:required").is_err());
        assert!(parse_schema("x:text, x:text").is_err());
        assert!(parse_schema("").unwrap().is_empty());
    }

    #[test]
    fn stage_paths() {
        use Stage::*;
        assert!(is_valid_path(&[Finish]));
        assert!(is_valid_path(&[GenerateCode, TestCode, EvaluateTestResults, GenerateMetadata, RegisterTool, Finish]));
        assert!(is_valid_path(&[GenerateCode, HandleFailure, GenerateCode, TestCode, HandleFailure, Finish]));
        assert!(!is_valid_path(&[GenerateCode, TestCode, GenerateMetadata, RegisterTool, Finish]));
        assert!(!is_valid_path(&[GenerateCode, TestCode]));
    }

    #[test]
    fn failure_routing() {
        assert!(handle_failure(1, 3, true));
        assert!(!handle_failure(3, 3, true));
        assert!(!handle_failure(1, 3, false));
        assert!(!CodegenError::SandboxUnavailable("x".into()).retryable());
        assert!(CodegenError::Registry(RegistryError::NameCollision("t".into())).retryable());
        assert!(!CodegenError::Registry(RegistryError::StorageFault("t".into())).retryable());
    }
}
