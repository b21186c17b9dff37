use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::gateway::StructuredQuery;
use crate::registry::{AgentName, ToolResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowStatus {
    Running,
    AwaitingHuman,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// `user`, `supervisor`, `agent:<Name>` or `tool:<name>`.
    pub actor: String,
    pub content: String,
}

impl TranscriptEntry {
    pub fn new(actor: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            actor: actor.into(),
            content: content.into(),
        }
    }
}

/// One tool invocation made on an agent's behalf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub tool: String,
    pub args: Map<String, Value>,
    pub result: ToolResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptKind {
    Clarification,
    Approval,
}

/// What to do with the human's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum InterruptContext {
    /// The query itself was under-specified; re-validate with the answer.
    Query,
    /// The supervisor asked; the answer joins the transcript.
    Supervisor,
    /// Tool synthesis awaits approval.
    Codegen { task: String, owner: Option<AgentName> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptRequest {
    pub kind: InterruptKind,
    pub prompt: String,
    pub originating_step: u64,
    pub context: InterruptContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteAction {
    RouteAgent,
    Respond,
    Clarify,
    RejectResult,
    RetryTask,
    InvokeCodegen,
    Finish,
}

impl RouteAction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RouteAgent => "route_agent",
            Self::Respond => "respond",
            Self::Clarify => "clarify",
            Self::RejectResult => "reject_result",
            Self::RetryTask => "retry_task",
            Self::InvokeCodegen => "invoke_codegen",
            Self::Finish => "finish",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::RouteAgent,
            Self::Respond,
            Self::Clarify,
            Self::RejectResult,
            Self::RetryTask,
            Self::InvokeCodegen,
            Self::Finish,
        ]
        .into_iter()
        .find(|a| a.as_str() == s.trim())
    }
}

impl fmt::Display for RouteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub action: RouteAction,
    pub target_agent: Option<AgentName>,
    pub message: Option<String>,
    /// Show outputs from earlier turns to the supervisor from now on.
    #[serde(default)]
    pub history: bool,
}

impl RoutingDecision {
    pub fn new(action: RouteAction) -> Self {
        Self {
            action,
            target_agent: None,
            message: None,
            history: false,
        }
    }

    pub fn to(mut self, agent: AgentName) -> Self {
        self.target_agent = Some(agent);
        self
    }

    pub fn saying(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }
}

/// The task the supervisor most recently routed; retries re-run it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRef {
    pub id: String,
    pub agent: AgentName,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub session_id: String,
    pub turn_index: u64,
    pub step_counter: u64,
    pub role: String,
    pub query: Option<StructuredQuery>,
    pub transcript: Vec<TranscriptEntry>,
    pub agent_outputs: BTreeMap<AgentName, Vec<AgentOutput>>,
    pub pending_interrupt: Option<InterruptRequest>,
    pub per_task_retries: BTreeMap<String, u32>,
    pub status: WorkflowStatus,
    /// Transcript index and step at which the current turn began.
    pub turn_transcript_start: usize,
    pub turn_step_start: u64,
    pub iterations: u32,
    pub tasks_routed: u32,
    pub current_task: Option<TaskRef>,
    pub include_history: bool,
    pub final_response: Option<String>,
    pub failure: Option<String>,
}

impl WorkflowState {
    pub fn new(session_id: &str, role: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            turn_index: 0,
            step_counter: 0,
            role: role.to_string(),
            query: None,
            transcript: Vec::new(),
            agent_outputs: BTreeMap::new(),
            pending_interrupt: None,
            per_task_retries: BTreeMap::new(),
            status: WorkflowStatus::Running,
            turn_transcript_start: 0,
            turn_step_start: 0,
            iterations: 0,
            tasks_routed: 0,
            current_task: None,
            include_history: false,
            final_response: None,
            failure: None,
        }
    }

    /// Starts the next turn on an existing session.
    pub fn begin_turn(&mut self, role: &str, first: bool) {
        if !first {
            self.turn_index += 1;
        }
        self.role = role.to_string();
        self.query = None;
        self.status = WorkflowStatus::Running;
        self.turn_transcript_start = self.transcript.len();
        self.turn_step_start = self.step_counter + 1;
        self.iterations = 0;
        self.tasks_routed = 0;
        self.current_task = None;
        self.include_history = false;
        self.final_response = None;
        self.failure = None;
    }

    pub fn push(&mut self, actor: impl Into<String>, content: impl Into<String>) {
        self.transcript.push(TranscriptEntry::new(actor, content));
    }

    pub fn turn_transcript(&self) -> &[TranscriptEntry] {
        &self.transcript[self.turn_transcript_start.min(self.transcript.len())..]
    }

    /// Outputs produced during this turn, in step order.
    pub fn turn_outputs(&self) -> Vec<(AgentName, &AgentOutput)> {
        let mut out: Vec<(AgentName, &AgentOutput)> = self
            .agent_outputs
            .iter()
            .flat_map(|(a, v)| v.iter().map(move |o| (*a, o)))
            .filter(|(_, o)| self.include_history || o.result.produced_at_step >= self.turn_step_start)
            .collect();
        out.sort_by_key(|(_, o)| o.result.produced_at_step);
        out
    }

    /// Structural invariants; checked after every step in debug builds and
    /// by the property tests.
    pub fn check_invariants(&self, retry_cap: u32) -> Result<(), String> {
        if (self.status == WorkflowStatus::AwaitingHuman) != self.pending_interrupt.is_some() {
            return Err("awaiting_human must coincide with a pending interrupt".into());
        }
        if let Some(i) = &self.pending_interrupt {
            if i.prompt.trim().is_empty() {
                return Err("interrupt prompt is empty".into());
            }
            if i.originating_step > self.step_counter {
                return Err("interrupt originates in the future".into());
            }
        }
        if let Some((k, v)) = self.per_task_retries.iter().find(|(_, v)| **v > retry_cap) {
            return Err(format!("task {k} retried {v} times"));
        }
        for outputs in self.agent_outputs.values() {
            if outputs.iter().any(|o| o.result.produced_at_step > self.step_counter) {
                return Err("output produced after the current step".into());
            }
        }
        Ok(())
    }
}
