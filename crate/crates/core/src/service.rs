//! HTTP API over a [`ChatEngine`].
//!
//! Sessions keep their turn history for display only; the selector never
//! sees earlier turns. Nothing here writes to the graph or checkpoints.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};

use crate::chat::{ChatEngine, ChatError, Turn};
use crate::graph::VertexId;

#[derive(Clone, Debug, Serialize)]
pub struct TurnRecord {
    pub message: String,
    pub v_start: VertexId,
    pub v_selected: VertexId,
    pub response: String,
}

#[derive(Default)]
struct Session {
    turns: Vec<TurnRecord>,
}

pub struct AppState {
    engine: Arc<ChatEngine>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(engine: Arc<ChatEngine>) -> Arc<Self> {
        Arc::new(Self {
            engine,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session map lock").get(id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}/message", post(post_message))
        .route("/session/{id}/history", get(history))
        .route("/graph/vertex/{id}", get(vertex))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(state): State<Arc<AppState>>) -> Json<Value> {
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    state
        .sessions
        .lock()
        .expect("session map lock")
        .insert(id.clone(), Arc::new(Mutex::new(Session::default())));
    Json(json!({ "session_id": id }))
}

/// JSON body of a message turn.
pub fn turn_body(engine: &ChatEngine, turn: &Turn) -> Value {
    let g = engine.graph();
    let surface = |v: VertexId| g.vertex(v).map(|x| x.surface.clone()).unwrap_or_default();
    let path: Vec<Value> = turn
        .path
        .iter()
        .map(|hop| {
            let top: Vec<Value> = hop
                .top5
                .iter()
                .map(|(label, dst, p)| json!({ "edge_label": label, "vertex_id": dst, "prob": p }))
                .collect();
            json!({
                "vertex_id": hop.dst,
                "surface": surface(hop.dst),
                "edge_label": hop.label,
                "step_distribution_top5": top,
            })
        })
        .collect();
    json!({
        "response": turn.response_text(),
        "v_start": turn.retrieval.vertex,
        "v_selected": turn.selected,
        "path": path,
        "knowledge_text": turn.knowledge_text,
    })
}

async fn post_message(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(session) = state.session(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"), None);
    };
    let parsed: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("body is not JSON: {e}"), Some("message")),
    };
    let Some(text) = parsed.get("message").and_then(Value::as_str).map(str::to_string) else {
        return error(
            StatusCode::BAD_REQUEST,
            "body must be an object with a string field `message`",
            Some("message"),
        );
    };
    let engine = state.engine.clone();
    let result = tokio::task::spawn_blocking(move || {
        let turn = engine.respond(&text)?;
        Ok::<_, ChatError>((turn_body(&engine, &turn), text, turn))
    })
    .await;
    match result {
        Ok(Ok((body, text, turn))) => {
            session.lock().expect("session lock").turns.push(TurnRecord {
                message: text,
                v_start: turn.retrieval.vertex,
                v_selected: turn.selected,
                response: turn.response_text(),
            });
            Json(body).into_response()
        }
        Ok(Err(e @ ChatError::TooLong { .. })) => error(StatusCode::PAYLOAD_TOO_LARGE, e.to_string(), Some("message")),
        Ok(Err(e @ ChatError::EmptyMessage)) => error(StatusCode::BAD_REQUEST, e.to_string(), Some("message")),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(session) = state.session(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"), None);
    };
    let turns = session.lock().expect("session lock").turns.clone();
    Json(json!({ "session_id": id, "turns": turns })).into_response()
}

async fn vertex(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Ok(n) = id.parse::<u32>() else {
        return error(StatusCode::BAD_REQUEST, format!("vertex id must be an integer, got {id:?}"), Some("id"));
    };
    let g = state.engine.graph();
    let Some(v) = g.vertex(VertexId(n)) else {
        return error(StatusCode::NOT_FOUND, format!("unknown vertex {n}"), None);
    };
    let out: Vec<Value> = g
        .out_edges(v.id)
        .iter()
        .map(|e| {
            json!({
                "edge_label": g.label_name(e.label),
                "vertex_id": e.dst,
                "surface": g.vertex(e.dst).map(|x| x.surface.as_str()).unwrap_or_default(),
            })
        })
        .collect();
    Json(json!({
        "vertex_id": v.id,
        "kind": v.kind,
        "surface": v.surface,
        "tokens": v.tokens,
        "out_edges": out,
    }))
    .into_response()
}

/// Binds `host:port` and serves until the process ends.
pub async fn serve(engine: Arc<ChatEngine>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(engine))).await
}
