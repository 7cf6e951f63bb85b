use std::sync::{Arc, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatir_core::dialogue::{Engine, ResponseDecision, Source, TracedCandidate, Timings, Turn};
use chatir_core::emotion::{EmotionLabel, EmotionPrediction};
use chatir_core::safety::SafetyVerdict;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::log::{ConversationLog, LogRecord, SessionRecord, TurnRecord};
use crate::store::{record_turns, SessionStore};

pub const MAX_TEXT_CHARS: usize = 2000;

/// Unix milliseconds.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

pub struct AppState {
    /// Unset until the models finish loading.
    pub engine: OnceLock<Arc<Engine>>,
    pub sessions: SessionStore,
    pub log: ConversationLog,
    pub debug_trace: bool,
    pub clock: Clock,
}

impl AppState {
    pub fn new(sessions: SessionStore, log: ConversationLog, debug_trace: bool, clock: Clock) -> Self {
        Self {
            engine: OnceLock::new(),
            sessions,
            log,
            debug_trace,
            clock,
        }
    }

    pub fn with_engine(self, engine: Arc<Engine>) -> Self {
        let _ = self.engine.set(engine);
        self
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/session", post(create_session))
        .route("/v1/chat", post(chat))
        .route("/v1/session/:id/history", get(history))
        .route("/v1/health", get(health))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn internal(e: chatir_core::Error) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionReply {
    pub session: String,
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<Json<SessionReply>, ApiError> {
    let mut rng = rand::thread_rng();
    let id = loop {
        let id = format!("{:032x}", rng.gen::<u128>());
        if !state.sessions.contains(&id) {
            break id;
        }
    };
    let now = state.now();
    state
        .log
        .append(&LogRecord::Session(SessionRecord {
            session: id.clone(),
            timestamp: now,
        }))
        .map_err(internal)?;
    state.sessions.insert(&id, now);
    Ok(Json(SessionReply { session: id }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub session: String,
    pub text: String,
    #[serde(default)]
    pub attachment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub safety: Option<SafetyVerdict>,
    pub emotion: Option<EmotionPrediction>,
    pub candidates: Vec<TracedCandidate>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub session: String,
    pub turn_index: usize,
    pub response: String,
    pub source: Source,
    pub emotion: EmotionLabel,
    pub offensive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ChatReply>, ApiError> {
    let req: ChatRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    if req.text.chars().count() > MAX_TEXT_CHARS {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("text exceeds {MAX_TEXT_CHARS} characters"),
        ));
    }
    if req.text.trim().is_empty() && !req.attachment {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty text"));
    }
    let engine = state
        .engine
        .get()
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "engine not ready"))?;
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session));
    let session = state.sessions.get(&req.session, state.now()).ok_or_else(unknown)?;

    let mut conv = session.conversation.lock().await;
    let decision: ResponseDecision = engine.decide(&conv, &req.text, req.attachment).map_err(internal)?;
    let record = TurnRecord {
        session: req.session.clone(),
        turn_index: conv.turns.len() / 2,
        user_text: req.text.clone(),
        attachment: req.attachment,
        response: decision.response.clone(),
        source: decision.source,
        emotion: decision.emotion.as_ref().map(|e| e.label),
        offensive: decision.safety.as_ref().is_some_and(|s| s.offensive),
        safety: decision.safety.clone(),
        timings: decision.timings,
        timestamp: state.now(),
    };
    // durable before the turn is visible or acknowledged
    state.log.append(&LogRecord::Turn(record.clone())).map_err(internal)?;
    conv.turns.extend(record_turns(&record));
    drop(conv);

    Ok(Json(ChatReply {
        session: req.session,
        turn_index: record.turn_index,
        response: decision.response,
        source: decision.source,
        emotion: record.emotion.unwrap_or(EmotionLabel::Others),
        offensive: record.offensive,
        trace: state.debug_trace.then(|| Trace {
            safety: decision.safety,
            emotion: decision.emotion,
            candidates: decision.candidates,
            timings: decision.timings,
        }),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryReply {
    pub session: String,
    pub turns: Vec<Turn>,
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<HistoryReply>, ApiError> {
    let session = state
        .sessions
        .get(&id, state.now())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let turns = session.conversation.lock().await.turns.clone();
    Ok(Json(HistoryReply { session: id, turns }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(match state.engine.get() {
        Some(engine) => json!({ "status": "ok", "index_size": engine.index().doc_count() }),
        None => json!({ "status": "loading", "index_size": 0 }),
    })
}
