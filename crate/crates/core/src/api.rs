//! OpenAI-compatible HTTP surface over the engine.
//!
//! A session is bound with the `X-Session-Id` header (or `metadata.session_id`
//! in the body). When the session is waiting on a human, the next user
//! message answers the interrupt; interrupts come back with
//! `finish_reason = "interrupt"`.

use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{EngineError, OutcomeKind, WorkflowOutcome, WorkflowStatus};
use crate::registry::{AgentName, ToolFilter, ToolOrigin};
use crate::system::System;

pub const SESSION_HEADER: &str = "x-session-id";
pub const ROLE_HEADER: &str = "x-user-role";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub model: Option<String>,
    pub messages: Vec<WireMessage>,
    #[serde(default)]
    pub stream: bool,
    #[serde(default)]
    pub metadata: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Choice {
    pub index: u32,
    pub message: WireMessage,
    /// `stop` or `interrupt`.
    pub finish_reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub id: String,
    pub object: String,
    pub created: i64,
    pub model: String,
    pub choices: Vec<Choice>,
    pub usage: Usage,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request_error", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, kind) = match &e {
            EngineError::SessionBusy(_) | EngineError::NoPendingInterrupt(_) => (StatusCode::CONFLICT, "conflict"),
            EngineError::UnknownRole(_) | EngineError::EmptyInput => {
                (StatusCode::BAD_REQUEST, "invalid_request_error")
            }
            EngineError::CheckpointMissing(_) => (StatusCode::NOT_FOUND, "not_found"),
            EngineError::UnknownAgent(_) | EngineError::DirectiveUnparseable(_) | EngineError::EngineFault(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "engine_fault")
            }
        };
        Self::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"message": self.message, "type": self.kind}});
        (self.status, Json(body)).into_response()
    }
}

pub fn router(system: Arc<System>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/chat/completions", post(chat_completions))
        .route("/health", get(health))
        .route("/v1/sessions/{id}", get(session))
        .route("/v1/tools", get(tools))
        .route("/v1/agents", get(agents))
        .with_state(system)
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::trim).filter(|s| !s.is_empty())
}

fn resolve_role(system: &System, headers: &HeaderMap) -> Result<String, ApiError> {
    if let Some(tokens) = &system.tokens {
        let token = header_str(headers, header::AUTHORIZATION.as_str())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "authentication_error", "missing bearer token"))?;
        return tokens
            .role_for(token)
            .map(str::to_string)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "authentication_error", "unknown bearer token"));
    }
    Ok(header_str(headers, ROLE_HEADER)
        .unwrap_or(&system.settings.default_role)
        .to_string())
}

fn parse_chat(body: &[u8]) -> Result<ChatRequest, ApiError> {
    let req: ChatRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    match req.messages.last() {
        None => Err(ApiError::bad_request("messages must not be empty")),
        Some(m) if m.role != "user" => Err(ApiError::bad_request("last message must have role user")),
        Some(m) if m.content.trim().is_empty() => Err(ApiError::bad_request("last message is empty")),
        Some(_) => Ok(req),
    }
}

fn completion(outcome: &WorkflowOutcome, model: &str) -> ChatResponse {
    let finish_reason = if outcome.state.status == WorkflowStatus::AwaitingHuman {
        "interrupt"
    } else {
        "stop"
    };
    ChatResponse {
        id: format!("chatcmpl-{}", uuid::Uuid::new_v4().simple()),
        object: "chat.completion".into(),
        created: chrono::Utc::now().timestamp(),
        model: model.to_string(),
        choices: vec![Choice {
            index: 0,
            message: WireMessage {
                role: "assistant".into(),
                content: outcome.content.clone(),
            },
            finish_reason: finish_reason.into(),
        }],
        usage: Usage::default(),
    }
}

/// The whole answer as one stream chunk followed by the terminator.
fn as_stream(resp: &ChatResponse) -> String {
    let choice = &resp.choices[0];
    let chunk = json!({
        "id": resp.id,
        "object": "chat.completion.chunk",
        "created": resp.created,
        "model": resp.model,
        "choices": [{
            "index": 0,
            "delta": {"role": "assistant", "content": choice.message.content},
            "finish_reason": choice.finish_reason,
        }],
    });
    format!("data: {chunk}\n\ndata: [DONE]\n\n")
}

async fn chat_completions(
    State(system): State<Arc<System>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req = parse_chat(&body)?;
    let role = resolve_role(&system, &headers)?;
    let session_id = header_str(&headers, SESSION_HEADER)
        .map(str::to_string)
        .or_else(|| {
            req.metadata
                .as_ref()
                .and_then(|m| m.get("session_id"))
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let text = req.messages.last().map(|m| m.content.clone()).unwrap_or_default();
    let model = req.model.clone().unwrap_or_else(|| "kubesteer".into());

    let engine = system.engine.clone();
    let sid = session_id.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let waiting = engine
            .session(&sid)?
            .is_some_and(|s| s.status == WorkflowStatus::AwaitingHuman);
        if waiting {
            engine.resume(&sid, &text)
        } else {
            engine.run_turn(&sid, &text, &role)
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine_fault", e.to_string()))??;
    if outcome.kind == OutcomeKind::Failure {
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine_fault", outcome.content));
    }

    let resp = completion(&outcome, &model);
    let mut response = if req.stream {
        ([(header::CONTENT_TYPE, "text/event-stream")], as_stream(&resp)).into_response()
    } else {
        Json(resp).into_response()
    };
    if let Ok(v) = HeaderValue::from_str(&session_id) {
        response.headers_mut().insert(SESSION_HEADER, v);
    }
    Ok(response)
}

async fn health(State(system): State<Arc<System>>) -> impl IntoResponse {
    let sys = system.clone();
    match tokio::task::spawn_blocking(move || sys.health()).await {
        Ok(h) => Json(serde_json::to_value(h).unwrap_or_default()),
        Err(e) => Json(json!({"status": "degraded", "components": {}, "error": e.to_string()})),
    }
}

async fn session(State(system): State<Arc<System>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let engine = system.engine.clone();
    let view = tokio::task::spawn_blocking(move || -> Result<Option<Value>, ApiError> {
        let Some(state) = engine.session(&id)? else {
            return Ok(None);
        };
        let checkpoints: Vec<Value> = engine
            .checkpoints()
            .list(&id)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?
            .into_iter()
            .map(|c| {
                json!({
                    "checkpoint_id": c.checkpoint_id,
                    "seq": c.seq,
                    "node_name": c.node_name,
                    "cause": c.cause,
                    "created_at": c.created_at,
                })
            })
            .collect();
        Ok(Some(json!({
            "session_id": state.session_id,
            "status": state.status,
            "turn_index": state.turn_index,
            "step_counter": state.step_counter,
            "role": state.role,
            "transcript": state.transcript,
            "pending_interrupt": state.pending_interrupt,
            "final_response": state.final_response,
            "failure": state.failure,
            "checkpoints": checkpoints,
        })))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine_fault", e.to_string()))??;
    view.map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "unknown session"))
}

#[derive(Debug, Deserialize)]
struct ToolQuery {
    agent: Option<String>,
    origin: Option<String>,
}

async fn tools(State(system): State<Arc<System>>, Query(q): Query<ToolQuery>) -> Result<Json<Value>, ApiError> {
    let agent = q
        .agent
        .as_deref()
        .map(AgentName::from_str)
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let origin = match q.origin.as_deref() {
        None => None,
        Some("builtin") => Some(ToolOrigin::Builtin),
        Some("generated") => Some(ToolOrigin::Generated),
        Some(other) => return Err(ApiError::bad_request(format!("unknown origin {other:?}"))),
    };
    let list: Vec<Value> = system
        .engine
        .registry()
        .list_tools(&ToolFilter { agent, origin })
        .into_iter()
        .map(|t| {
            json!({
                "name": t.name,
                "agent": t.owner_agent,
                "description": t.description,
                "category": t.category,
                "origin": t.origin,
                "version": t.version,
                "llm_produced": t.llm_produced,
                "input_schema": t.input_schema,
            })
        })
        .collect();
    Ok(Json(Value::Array(list)))
}

async fn agents(State(system): State<Arc<System>>) -> Json<Value> {
    let list: Vec<Value> = system
        .engine
        .registry()
        .agents()
        .map(|a| json!({"name": a.name, "description": a.description}))
        .collect();
    Json(Value::Array(list))
}

/// Binds and serves until ctrl-c.
pub async fn serve(system: Arc<System>, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(system))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
