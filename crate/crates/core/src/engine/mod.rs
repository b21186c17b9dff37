//! Supervisor loop: validate, route, dispatch, interrupt, finish. Every
//! step commits exactly one checkpoint whose sequence number is the step.

mod render;
mod state;

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use render::{flagged_pods, report, truncate};
pub use state::{
    AgentOutput, InterruptContext, InterruptKind, InterruptRequest, RouteAction, RoutingDecision, TaskRef,
    TranscriptEntry, WorkflowState, WorkflowStatus,
};

use crate::codegen::{Approval, CodegenAgent, PipelineContext, RunOutcome};
use crate::directive;
use crate::gateway::{GatewayError, QueryGateway, QueryStatus};
use crate::governance::{AuditAction, AuditEntry, AuditLog};
use crate::kube::ClusterBackend;
use crate::llm::{ChatMessage, LlmError, LlmGateway, Purpose};
use crate::memory::{canonical_json, restore_state, CheckpointCause, CheckpointStore, MemoryError};
use crate::registry::{AgentName, AgentRegistry, DispatchContext, MatchOutcome, RegistryError, ToolResult, DIRECTIVE_RETRIES};
use crate::sandbox::Sandbox;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("session {0} is busy")]
    SessionBusy(String),
    #[error("session {0} has no pending interrupt")]
    NoPendingInterrupt(String),
    #[error("no checkpoint for session {0}")]
    CheckpointMissing(String),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("empty input")]
    EmptyInput,
    #[error("supervisor named unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("supervisor directive unusable: {0}")]
    DirectiveUnparseable(String),
    #[error("engine fault: {0}")]
    EngineFault(String),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub loop_cap: u32,
    pub retry_cap: u32,
    /// Ask before synthesizing tools.
    pub hitl: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            loop_cap: 25,
            retry_cap: 3,
            hitl: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Response,
    Interrupt,
    Rejection,
    Failure,
}

#[derive(Debug, Clone)]
pub struct WorkflowOutcome {
    pub kind: OutcomeKind,
    pub content: String,
    pub state: WorkflowState,
}

pub struct EngineParts {
    pub llm: Arc<LlmGateway>,
    pub gateway: QueryGateway,
    pub registry: Arc<AgentRegistry>,
    pub cluster: Arc<dyn ClusterBackend>,
    pub sandbox: Option<Arc<Sandbox>>,
    pub audit: Arc<AuditLog>,
    pub checkpoints: Arc<dyn CheckpointStore>,
    pub codegen: CodegenAgent,
    pub config: EngineConfig,
}

pub struct Engine {
    llm: Arc<LlmGateway>,
    gateway: QueryGateway,
    registry: Arc<AgentRegistry>,
    cluster: Arc<dyn ClusterBackend>,
    sandbox: Option<Arc<Sandbox>>,
    audit: Arc<AuditLog>,
    checkpoints: Arc<dyn CheckpointStore>,
    codegen: CodegenAgent,
    config: EngineConfig,
    leases: Mutex<HashSet<String>>,
}

struct Lease<'a> {
    set: &'a Mutex<HashSet<String>>,
    id: String,
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        self.set.lock().remove(&self.id);
    }
}

/// Answers supplied up front, consumed instead of pausing.
type Answers = VecDeque<String>;

fn fault(e: impl std::fmt::Display) -> EngineError {
    EngineError::EngineFault(e.to_string())
}

fn is_infrastructure(e: &LlmError) -> bool {
    matches!(e, LlmError::ProviderUnavailable { .. } | LlmError::RateLimited { .. })
}

fn approval_granted(answer: &str) -> bool {
    let a = answer.trim().to_ascii_lowercase();
    ["y", "yes", "approve", "approved", "ok", "go ahead"]
        .iter()
        .any(|w| a == *w || a.starts_with(&format!("{w} ")) || a.starts_with(&format!("{w},")))
}

impl Engine {
    pub fn new(parts: EngineParts) -> Self {
        Self {
            llm: parts.llm,
            gateway: parts.gateway,
            registry: parts.registry,
            cluster: parts.cluster,
            sandbox: parts.sandbox,
            audit: parts.audit,
            checkpoints: parts.checkpoints,
            codegen: parts.codegen,
            config: parts.config,
            leases: Mutex::new(HashSet::new()),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &AgentRegistry {
        &self.registry
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn checkpoints(&self) -> &dyn CheckpointStore {
        self.checkpoints.as_ref()
    }

    pub fn llm(&self) -> &LlmGateway {
        &self.llm
    }

    pub fn cluster(&self) -> &dyn ClusterBackend {
        self.cluster.as_ref()
    }

    pub fn sandbox(&self) -> Option<&Sandbox> {
        self.sandbox.as_deref()
    }

    pub fn query_gateway(&self) -> &QueryGateway {
        &self.gateway
    }

    fn lease(&self, session_id: &str) -> Result<Lease<'_>, EngineError> {
        if !self.leases.lock().insert(session_id.to_string()) {
            return Err(EngineError::SessionBusy(session_id.to_string()));
        }
        Ok(Lease {
            set: &self.leases,
            id: session_id.to_string(),
        })
    }

    /// Latest persisted state of a session.
    pub fn session(&self, session_id: &str) -> Result<Option<WorkflowState>, EngineError> {
        match self.checkpoints.load_latest(session_id) {
            Ok(cp) => restore_state(&cp).map(Some).map_err(fault),
            Err(MemoryError::NotFound(_)) => Ok(None),
            Err(e) => Err(fault(e)),
        }
    }

    pub fn run_turn(&self, session_id: &str, text: &str, role: &str) -> Result<WorkflowOutcome, EngineError> {
        self.run_turn_with_answers(session_id, text, role, &[])
    }

    /// Like [`run_turn`](Self::run_turn), but interrupts are answered from
    /// `answers` in order instead of pausing while any remain.
    pub fn run_turn_with_answers(
        &self,
        session_id: &str,
        text: &str,
        role: &str,
        answers: &[&str],
    ) -> Result<WorkflowOutcome, EngineError> {
        let text = text.trim();
        if text.is_empty() || session_id.trim().is_empty() {
            return Err(EngineError::EmptyInput);
        }
        if self.gateway.roles().get(role).is_err() {
            return Err(EngineError::UnknownRole(role.to_string()));
        }
        let _lease = self.lease(session_id)?;
        let mut state = match self.session(session_id)? {
            Some(mut s) => {
                if s.status == WorkflowStatus::AwaitingHuman {
                    return Err(EngineError::SessionBusy(session_id.to_string()));
                }
                s.begin_turn(role, false);
                s
            }
            None => {
                let mut s = WorkflowState::new(session_id, role);
                s.begin_turn(role, true);
                s
            }
        };
        let mut answers: Answers = answers.iter().map(|a| a.to_string()).collect();
        state.push("user", text);
        self.record(
            &state,
            AuditEntry::new(AuditAction::QueryReceived, "user", "query", json!({"text": text, "role": role}), "received"),
        )?;
        let result = self
            .validate_step(&mut state, text, &mut answers)
            .and_then(|_| self.drive(&mut state, &mut answers));
        self.settle(state, result)
    }

    /// Answers the pending interrupt and continues the turn.
    pub fn resume(&self, session_id: &str, input: &str) -> Result<WorkflowOutcome, EngineError> {
        self.resume_with_answers(session_id, input, &[])
    }

    pub fn resume_with_answers(
        &self,
        session_id: &str,
        input: &str,
        answers: &[&str],
    ) -> Result<WorkflowOutcome, EngineError> {
        let _lease = self.lease(session_id)?;
        let mut state = self
            .session(session_id)?
            .ok_or_else(|| EngineError::CheckpointMissing(session_id.to_string()))?;
        if state.status != WorkflowStatus::AwaitingHuman {
            return Err(EngineError::NoPendingInterrupt(session_id.to_string()));
        }
        let mut answers: Answers = answers.iter().map(|a| a.to_string()).collect();
        let result = self
            .resolve(&mut state, input.trim(), &mut answers)
            .and_then(|_| self.drive(&mut state, &mut answers));
        self.settle(state, result)
    }

    /// Turns a finished drive into an outcome; engine faults mark the
    /// session failed with a checkpoint before surfacing.
    fn settle(&self, mut state: WorkflowState, result: Result<(), EngineError>) -> Result<WorkflowOutcome, EngineError> {
        if let Err(e) = result {
            if matches!(e, EngineError::SessionBusy(_)) {
                return Err(e);
            }
            if state.status != WorkflowStatus::Failed {
                let _ = self.fail(&mut state, &e.to_string());
            }
            return Err(e);
        }
        let (kind, content) = match state.status {
            WorkflowStatus::AwaitingHuman => (
                OutcomeKind::Interrupt,
                state.pending_interrupt.as_ref().map(|i| i.prompt.clone()).unwrap_or_default(),
            ),
            WorkflowStatus::Failed => (OutcomeKind::Failure, state.failure.clone().unwrap_or_default()),
            _ => {
                let rejected = state.query.as_ref().is_some_and(|q| q.status == QueryStatus::Rejected);
                (
                    if rejected { OutcomeKind::Rejection } else { OutcomeKind::Response },
                    state.final_response.clone().unwrap_or_default(),
                )
            }
        };
        Ok(WorkflowOutcome { kind, content, state })
    }

    fn record(&self, state: &WorkflowState, entry: AuditEntry) -> Result<(), EngineError> {
        self.audit.append(entry.session(&state.session_id)).map(|_| ()).map_err(fault)
    }

    fn commit(&self, state: &mut WorkflowState, node: &str, cause: CheckpointCause) -> Result<(), EngineError> {
        state.step_counter += 1;
        debug_assert_eq!(state.check_invariants(self.config.retry_cap), Ok(()));
        let blob = canonical_json(state).map_err(fault)?;
        self.checkpoints
            .save(&state.session_id, state.step_counter, node, cause, blob)
            .map(|_| ())
            .map_err(fault)
    }

    fn fail(&self, state: &mut WorkflowState, reason: &str) -> Result<(), EngineError> {
        state.status = WorkflowStatus::Failed;
        state.pending_interrupt = None;
        state.failure = Some(reason.to_string());
        state.push("supervisor", format!("failed: {reason}"));
        self.commit(state, "failed", CheckpointCause::Failure)
    }

    fn validate_step(&self, state: &mut WorkflowState, text: &str, answers: &mut Answers) -> Result<(), EngineError> {
        let q = match self
            .gateway
            .validate_query(&self.llm, text, &state.role, Some(&state.session_id))
        {
            Ok(q) => q,
            Err(GatewayError::PolicyConfigMissing(r)) => return Err(EngineError::UnknownRole(r)),
            Err(e) => return Err(fault(e)),
        };
        state.query = Some(q.clone());
        match q.status {
            QueryStatus::Accepted => self.commit(state, "validate_query", CheckpointCause::NodeBoundary),
            QueryStatus::Rejected => {
                let reason = q.rejection_reason.clone().unwrap_or_default();
                self.record(
                    state,
                    AuditEntry::new(AuditAction::QueryRejected, "query-gateway", "query", json!({"text": text}), &reason),
                )?;
                let msg = if reason == crate::gateway::REASON_PERMISSION {
                    format!("Request rejected (permission): role {} may not perform this operation.", state.role)
                } else {
                    format!("Request rejected ({reason}): this assistant only handles Kubernetes operations.")
                };
                state.push("supervisor", &msg);
                state.final_response = Some(msg);
                state.status = WorkflowStatus::Completed;
                self.commit(state, "validate_query", CheckpointCause::Completion)
            }
            QueryStatus::NeedsClarification => {
                let prompt = q.clarification_prompt.clone().unwrap_or_default();
                self.raise(state, InterruptKind::Clarification, prompt, InterruptContext::Query, answers)
            }
        }
    }

    fn raise(
        &self,
        state: &mut WorkflowState,
        kind: InterruptKind,
        prompt: String,
        context: InterruptContext,
        answers: &mut Answers,
    ) -> Result<(), EngineError> {
        state.push("supervisor", &prompt);
        state.pending_interrupt = Some(InterruptRequest {
            kind,
            prompt: prompt.clone(),
            originating_step: state.step_counter + 1,
            context,
        });
        state.status = WorkflowStatus::AwaitingHuman;
        self.record(
            state,
            AuditEntry::new(AuditAction::InterruptRaised, "supervisor", "interrupt", json!({"kind": kind, "prompt": prompt}), "raised"),
        )?;
        self.commit(state, "interrupt", CheckpointCause::Interrupt)?;
        match answers.pop_front() {
            Some(a) => self.resolve(state, &a, answers),
            None => Ok(()),
        }
    }

    /// Shared by `resume` and by pre-answered interrupts, so both paths
    /// produce the same transcript.
    fn resolve(&self, state: &mut WorkflowState, input: &str, answers: &mut Answers) -> Result<(), EngineError> {
        let interrupt = state
            .pending_interrupt
            .take()
            .ok_or_else(|| EngineError::NoPendingInterrupt(state.session_id.clone()))?;
        state.status = WorkflowStatus::Running;
        state.push("user", input);
        self.record(
            state,
            AuditEntry::new(AuditAction::InterruptResolved, "user", "interrupt", json!({"kind": interrupt.kind, "answer": input}), "resolved"),
        )?;
        match interrupt.context {
            InterruptContext::Query => {
                let raw = state.query.as_ref().map(|q| q.raw_text.clone()).unwrap_or_default();
                self.validate_step(state, &format!("{raw}\nClarification: {input}"), answers)
            }
            InterruptContext::Supervisor => self.commit(state, "resume", CheckpointCause::NodeBoundary),
            InterruptContext::Codegen { task, owner } => {
                let approval = if approval_granted(input) { Approval::Granted } else { Approval::Denied };
                self.apply_approval(state, approval, &task, owner)
            }
        }
    }

    fn drive(&self, state: &mut WorkflowState, answers: &mut Answers) -> Result<(), EngineError> {
        while state.status == WorkflowStatus::Running {
            if state.iterations >= self.config.loop_cap {
                return self.fail(state, &format!("supervisor loop cap of {} reached", self.config.loop_cap));
            }
            state.iterations += 1;
            let decision = self.supervisor_route(state)?;
            self.record(
                state,
                AuditEntry::new(
                    AuditAction::RoutingDecision,
                    "supervisor",
                    decision.action.as_str(),
                    serde_json::to_value(&decision).unwrap_or_default(),
                    decision.target_agent.map(|a| a.to_string()).unwrap_or_default(),
                ),
            )?;
            self.dispatch_step(state, decision, answers)?;
        }
        Ok(())
    }

    fn task_id(state: &WorkflowState) -> String {
        state
            .current_task
            .as_ref()
            .map(|t| t.id.clone())
            .unwrap_or_else(|| format!("t{}.0", state.turn_index))
    }

    /// One LLM call, validated strictly. Retry-type decisions bump the task's
    /// counter; past the cap they turn into `finish`.
    pub fn supervisor_route(&self, state: &mut WorkflowState) -> Result<RoutingDecision, EngineError> {
        let system = render::supervisor_system(&self.registry);
        let base = render::supervisor_user(state);
        let mut feedback = String::new();
        let mut last = EngineError::DirectiveUnparseable(String::new());
        for _ in 0..=DIRECTIVE_RETRIES {
            let req = self
                .llm
                .request(
                    Purpose::Route,
                    vec![ChatMessage::system(&system), ChatMessage::user(format!("{base}{feedback}"))],
                )
                .with_session(Some(&state.session_id));
            let content = match self.llm.complete(&req) {
                Ok(r) => r.content,
                Err(e) => return Err(fault(e)),
            };
            match parse_decision(&content) {
                Ok(d) => return Ok(self.apply_retry_counter(state, d)),
                Err(e) => {
                    feedback = format!("\nYour previous reply was rejected: {e}");
                    last = e;
                }
            }
        }
        Err(last)
    }

    fn apply_retry_counter(&self, state: &mut WorkflowState, d: RoutingDecision) -> RoutingDecision {
        if !matches!(d.action, RouteAction::RejectResult | RouteAction::RetryTask) {
            return d;
        }
        let id = Self::task_id(state);
        let count = state.per_task_retries.entry(id.clone()).or_insert(0);
        if *count >= self.config.retry_cap {
            return RoutingDecision::new(RouteAction::Finish)
                .saying(format!("Gave up on task {id} after {} retries.", self.config.retry_cap));
        }
        *count += 1;
        d
    }

    /// Executes one decision; exactly one checkpoint results.
    pub fn dispatch_step(
        &self,
        state: &mut WorkflowState,
        decision: RoutingDecision,
        answers: &mut Answers,
    ) -> Result<(), EngineError> {
        if decision.history {
            state.include_history = true;
        }
        let message = decision.message.clone().unwrap_or_default();
        match decision.action {
            RouteAction::RouteAgent => {
                let agent = decision
                    .target_agent
                    .ok_or_else(|| EngineError::DirectiveUnparseable("route_agent without target_agent".into()))?;
                let task = if message.is_empty() {
                    state.query.as_ref().map(|q| q.raw_text.clone()).unwrap_or_default()
                } else {
                    message
                };
                state.tasks_routed += 1;
                let t = TaskRef {
                    id: format!("t{}.{}", state.turn_index, state.tasks_routed),
                    agent,
                    message: task.clone(),
                };
                state.push("supervisor", format!("route_agent {agent}: {task}"));
                state.current_task = Some(t);
                self.agent_step(state, agent, &task, answers)
            }
            RouteAction::RetryTask => {
                let Some(t) = state.current_task.clone() else {
                    state.push("supervisor", "retry_task: nothing to retry");
                    return self.commit(state, "retry_task", CheckpointCause::NodeBoundary);
                };
                state.push("supervisor", format!("retry_task {}: {}", t.id, t.message));
                self.agent_step(state, t.agent, &t.message, answers)
            }
            RouteAction::RejectResult => {
                let id = Self::task_id(state);
                state.push("supervisor", format!("reject_result {id}: {message}"));
                self.commit(state, "reject_result", CheckpointCause::NodeBoundary)
            }
            RouteAction::Clarify => {
                let prompt = if message.is_empty() {
                    "Could you clarify the request?".to_string()
                } else {
                    message
                };
                self.raise(state, InterruptKind::Clarification, prompt, InterruptContext::Supervisor, answers)
            }
            RouteAction::InvokeCodegen => {
                let task = if message.is_empty() {
                    state.query.as_ref().map(|q| q.raw_text.clone()).unwrap_or_default()
                } else {
                    message
                };
                state.push("supervisor", format!("invoke_codegen: {task}"));
                self.request_codegen(state, &task, decision.target_agent, answers)
            }
            RouteAction::Respond => self.finish(state, Some(message)),
            RouteAction::Finish => self.finish(state, decision.message),
        }
    }

    fn agent_step(
        &self,
        state: &mut WorkflowState,
        agent: AgentName,
        task: &str,
        answers: &mut Answers,
    ) -> Result<(), EngineError> {
        let actor = format!("agent:{agent}");
        let sid = state.session_id.clone();
        let spec = match self.registry.match_tool(&self.llm, agent, task, Some(&sid)) {
            Ok(MatchOutcome::Tool(spec)) => spec,
            Ok(MatchOutcome::NoMatch) => {
                state.push(&actor, format!("no matching tool for: {task}"));
                return self.request_codegen(state, task, Some(agent), answers);
            }
            Err(RegistryError::Llm(e)) if is_infrastructure(&e) => return Err(fault(e)),
            Err(e) => {
                state.push(&actor, format!("error: {e}"));
                return self.commit(state, "route_agent", CheckpointCause::NodeBoundary);
            }
        };
        let context = render::args_context(state);
        let task_text = if context.is_empty() {
            task.to_string()
        } else {
            format!("{task}\nResults so far:\n{context}")
        };
        let arg_sets = match self.registry.extract_args(&self.llm, &spec, &task_text, Some(&sid)) {
            Ok(a) => a,
            Err(RegistryError::Llm(e)) if is_infrastructure(&e) => return Err(fault(e)),
            Err(e) => {
                state.push(&actor, format!("{} -> error: {e}", spec.name));
                return self.commit(state, "route_agent", CheckpointCause::NodeBoundary);
            }
        };
        let step = state.step_counter + 1;
        for args in arg_sets {
            let ctx = DispatchContext {
                cluster: self.cluster.as_ref(),
                sandbox: self.sandbox.as_deref(),
                audit: &self.audit,
                roles: self.gateway.roles(),
                role: &state.role,
                session_id: Some(&sid),
                step,
            };
            let result = match self.registry.dispatch(&spec, &args, &ctx) {
                Ok(r) => r,
                Err(e @ RegistryError::SchemaViolation { .. }) => ToolResult::error(e.to_string(), step),
                Err(e) => return Err(fault(e)),
            };
            let line = match &result.error_message {
                None => format!("{} -> success: {}", spec.name, render::data_summary(&result.data)),
                Some(m) => format!("{} -> error: {m}", spec.name),
            };
            state.push(&actor, line);
            state.push(format!("tool:{}", spec.name), result.envelope().to_string());
            state.agent_outputs.entry(agent).or_default().push(AgentOutput {
                tool: spec.name.clone(),
                args,
                result,
            });
        }
        self.commit(state, "route_agent", CheckpointCause::NodeBoundary)
    }

    fn request_codegen(
        &self,
        state: &mut WorkflowState,
        task: &str,
        owner: Option<AgentName>,
        answers: &mut Answers,
    ) -> Result<(), EngineError> {
        if self.config.hitl {
            let prompt = format!("No existing tool can do this: {task}\nGenerate, test and register a new tool? (yes/no)");
            let context = InterruptContext::Codegen {
                task: task.to_string(),
                owner,
            };
            self.raise(state, InterruptKind::Approval, prompt, context, answers)
        } else {
            self.apply_approval(state, Approval::NotRequired, task, owner)
        }
    }

    fn apply_approval(
        &self,
        state: &mut WorkflowState,
        approval: Approval,
        task: &str,
        owner: Option<AgentName>,
    ) -> Result<(), EngineError> {
        let summary = format!(
            "Query: {}",
            state.query.as_ref().map(|q| q.raw_text.as_str()).unwrap_or(task)
        );
        let ctx = PipelineContext {
            llm: &self.llm,
            registry: &self.registry,
            cluster: self.cluster.as_ref(),
            sandbox: self.sandbox.as_deref(),
            audit: &self.audit,
            checkpoints: Some(self.checkpoints.as_ref()),
            session_id: Some(&state.session_id),
            owner,
            context_summary: &summary,
        };
        let run = self.codegen.run_pipeline(&ctx, task, approval);
        let step = state.step_counter + 1;
        let stages: Vec<&str> = run.path.iter().map(|s| s.as_str()).collect();
        let (line, result) = match (&run.outcome, &run.tool) {
            (Some(RunOutcome::Registered), Some(tool)) => (
                format!(
                    "registered tool {} v{} for {} after {} attempt(s)",
                    tool.name, tool.version, tool.owner_agent, run.attempts_used
                ),
                ToolResult::success(
                    json!({
                        "outcome": "registered",
                        "attempts_used": run.attempts_used,
                        "stages": stages,
                        "tool": tool.name,
                        "version": tool.version,
                        "owner_agent": tool.owner_agent,
                    }),
                    step,
                ),
            ),
            _ if approval == Approval::Denied => (
                "code generation declined by the user".to_string(),
                ToolResult::error("code generation declined", step),
            ),
            _ => {
                let cause = run.abort_cause.clone().unwrap_or_else(|| "aborted".into());
                (
                    format!("code generation aborted after {} attempt(s): {cause}", run.attempts_used),
                    ToolResult {
                        data: json!({"outcome": "aborted", "attempts_used": run.attempts_used, "stages": stages}),
                        ..ToolResult::error(cause, step)
                    },
                )
            }
        };
        state.push("agent:CodeGenerator", line);
        let mut args = Map::new();
        args.insert("task".into(), Value::String(task.to_string()));
        state
            .agent_outputs
            .entry(AgentName::CodeGenerator)
            .or_default()
            .push(AgentOutput {
                tool: "codegen".into(),
                args,
                result,
            });
        self.commit(state, "invoke_codegen", CheckpointCause::NodeBoundary)
    }

    fn finish(&self, state: &mut WorkflowState, narrative: Option<String>) -> Result<(), EngineError> {
        let narrative = match narrative.filter(|m| !m.trim().is_empty()) {
            Some(m) => m,
            None => {
                let req = self
                    .llm
                    .request(
                        Purpose::Summarize,
                        vec![
                            ChatMessage::system(render::SUMMARIZE_SYSTEM),
                            ChatMessage::user(render::summarize_user(state)),
                        ],
                    )
                    .with_session(Some(&state.session_id));
                match self.llm.complete(&req) {
                    Ok(r) => r.content.trim().to_string(),
                    Err(e) if is_infrastructure(&e) => return Err(fault(e)),
                    Err(_) => render::fallback_narrative(state),
                }
            }
        };
        let text = format!("{narrative}\n\n{}", render::report(state));
        state.push("supervisor", &text);
        state.final_response = Some(text);
        state.status = WorkflowStatus::Completed;
        self.commit(state, "finish", CheckpointCause::Completion)
    }
}

/// Parses and validates a supervisor directive.
pub fn parse_decision(content: &str) -> Result<RoutingDecision, EngineError> {
    let bad = |e: String| EngineError::DirectiveUnparseable(e);
    let d = directive::parse_single(content).map_err(|e| bad(e.to_string()))?;
    d.expect_keys(&["action", "target_agent", "message", "history"], &[])
        .map_err(|e| bad(e.to_string()))?;
    let action_text = d.require("action").map_err(|e| bad(e.to_string()))?;
    let action = RouteAction::parse(action_text).ok_or_else(|| bad(format!("unknown action {action_text:?}")))?;
    let target_agent = match d.get("target_agent") {
        Some(t) => Some(
            t.parse::<AgentName>()
                .map_err(|_| EngineError::UnknownAgent(t.to_string()))?,
        ),
        None => None,
    };
    let message = d.get("message").map(str::to_string);
    match action {
        RouteAction::RouteAgent if target_agent.is_none() => return Err(bad("route_agent needs target_agent".into())),
        RouteAction::Clarify | RouteAction::Respond if message.is_none() => {
            return Err(bad(format!("{action} needs a message")))
        }
        _ => {}
    }
    let history = d
        .get("history")
        .is_some_and(|h| matches!(h.to_ascii_lowercase().as_str(), "yes" | "true"));
    Ok(RoutingDecision {
        action,
        target_agent,
        message,
        history,
    })
}
