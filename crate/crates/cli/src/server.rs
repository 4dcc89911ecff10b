//! JSON HTTP interface over a shared, read-only [`Agent`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use emoxl::model::MemoryState;
use emoxl::text::CoarseEmotion;

use crate::agent::Agent;
use crate::cli::ServeArgs;
use crate::failure::{CmdResult, Failure};

type Session = Arc<tokio::sync::Mutex<MemoryState>>;

pub struct AppState {
    pub agent: Agent,
    /// Present when sessions are enabled. Each session's memory sits behind
    /// its own lock, so requests within one session run one at a time.
    sessions: Option<Mutex<HashMap<String, Session>>>,
}

impl AppState {
    pub fn new(agent: Agent, sessions: bool) -> Self {
        AppState {
            agent,
            sessions: sessions.then(|| Mutex::new(HashMap::new())),
        }
    }

    fn session(&self, id: Option<&str>) -> Option<Session> {
        let map = self.sessions.as_ref()?;
        let mut map = map.lock().unwrap_or_else(|e| e.into_inner());
        let memory = map
            .entry(id?.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(self.agent.chatbot.empty_memory())));
        Some(memory.clone())
    }
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub text: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub emotion_override: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub emotion_coarse: String,
    pub emotion_probs: Vec<f64>,
    pub response: String,
    pub token_count: usize,
    pub latency_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub emotions: Vec<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    let config = state.agent.chatbot.config();
    Json(ModelInfo {
        vocab_size: config.vocab_size,
        d_model: config.d_model,
        n_heads: config.n_heads,
        emotions: CoarseEmotion::labels().iter().map(|s| s.to_string()).collect(),
    })
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    if request.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "text must not be empty");
    }
    let emotion = match request.emotion_override.as_deref().map(str::parse::<CoarseEmotion>).transpose() {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let session = match state.session(request.session_id.as_deref()) {
        Some(s) => Some(s.lock_owned().await),
        None => None,
    };

    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let mut session = session;
        let reply = worker.agent.reply(&request.text, emotion, session.as_deref());
        if let (Ok(reply), Some(memory)) = (&reply, session.as_deref_mut()) {
            *memory = reply.memory.clone();
        }
        reply
    })
    .await;

    match result {
        Ok(Ok(reply)) => Json(ChatResponse {
            emotion_coarse: reply.emotion.to_string(),
            emotion_probs: reply.probs.iter().map(|&p| p as f64).collect(),
            response: reply.response,
            token_count: reply.token_count,
            latency_ms: start.elapsed().as_millis() as u64,
        })
        .into_response(),
        Ok(Err(emoxl::Error::Data(e))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn cors(mut response: Response) -> Response {
    let headers = response.headers_mut();
    headers.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    headers.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    headers.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model-info", get(model_info))
        .route("/chat", post(chat).options(preflight))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such route") })
        .layer(axum::middleware::map_response(cors))
        .with_state(state)
}

pub fn run(args: &ServeArgs) -> CmdResult {
    let agent = Agent::load(&args.models.classifier, &args.models.chatbot)?;
    let state = Arc::new(AppState::new(agent, args.session));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::usage(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let addr = SocketAddr::from(([127, 0, 0, 1], args.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::usage(format!("cannot listen on {addr}: {e}")))?;
        eprintln!(
            "listening on http://{addr} ({} mode)",
            if args.session { "session" } else { "stateless" }
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::usage(format!("server failed: {e}")))
    })
}
