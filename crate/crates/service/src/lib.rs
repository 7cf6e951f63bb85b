//! HTTP/JSON chat service: sessions, the respond pipeline, and an
//! append-only conversation log that is replayed at startup.

pub mod api;
pub mod config;
pub mod log;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use chatir_core::dialogue::Engine;
use chatir_core::{Error, Result};
use tokio::task::JoinHandle;

pub use api::{router, system_clock, AppState, ChatReply, ChatRequest, Clock, HistoryReply, SessionReply, MAX_TEXT_CHARS};
pub use config::ServiceConfig;
pub use log::{read_log, ConversationLog, LogRecord, TurnRecord};
pub use store::SessionStore;

/// A running server.
pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    pub task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

/// Replays the log, binds, and starts serving. Chat answers 503 until an
/// engine is set on `state.engine`.
pub async fn start(config: &ServiceConfig, engine: Option<Arc<Engine>>, clock: Clock) -> Result<Server> {
    let ttl_ms = config.session_ttl_secs.saturating_mul(1000);
    let sessions = SessionStore::replay(&read_log(&config.log_path)?, ttl_ms, clock())?;
    let log = ConversationLog::open(&config.log_path)?;
    let mut state = AppState::new(sessions, log, config.debug_trace, clock);
    if let Some(engine) = engine {
        state = state.with_engine(engine);
    }
    let state = Arc::new(state);
    let bind = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| Error::io(bind.as_str(), e))?;
    let addr = listener.local_addr().map_err(|e| Error::io(bind.as_str(), e))?;
    let app = router(Arc::clone(&state));
    let task = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(Server { addr, state, task })
}

/// Serves until the process stops, loading models in the background.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let server = start(&config, None, system_clock()).await?;
    println!("listening on http://{}", server.addr);
    let loader = config.clone();
    let engine = tokio::task::spawn_blocking(move || loader.load_engine())
        .await
        .map_err(|e| Error::EngineNotReady(e.to_string()))??;
    let _ = server.state.engine.set(Arc::new(engine));
    println!("engine ready");
    server
        .task
        .await
        .map_err(|e| Error::EngineNotReady(e.to_string()))?
        .map_err(|e| Error::io(server.addr.to_string(), e))
}
