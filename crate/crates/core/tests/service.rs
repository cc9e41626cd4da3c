use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use kgselect::chat::{ChatEngine, ChatSettings};
use kgselect::env::EpisodeConfig;
use kgselect::graph::NO_OP;
use kgselect::policy::{Policy, PolicyConfig};
use kgselect::service::{router, AppState};
use kgselect::testing::twenty_vertex_graph;
use kgselect::vocab::Vocab;

const HORIZON: usize = 3;

fn engine(beam: usize) -> Arc<ChatEngine> {
    let graph = Arc::new(twenty_vertex_graph());
    let vocab = Vocab::build(graph.vertices().iter().map(|v| &v.tokens));
    let cfg = PolicyConfig {
        dim: 4,
        hidden: 8,
        ..PolicyConfig::default()
    };
    let policy = Policy::new(&graph, vocab, cfg, 3).unwrap();
    let settings = ChatSettings {
        episode: EpisodeConfig {
            horizon: HORIZON,
            ..EpisodeConfig::default()
        },
        beam_width: beam,
        max_message_tokens: 8,
        reader_window: 30,
        max_response_tokens: 20,
    };
    Arc::new(ChatEngine::new(graph, policy, None, settings).unwrap())
}

fn app() -> Router {
    router(AppState::new(engine(1)))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (s, v) = call(app, Method::POST, "/session", None).await;
    assert_eq!(s, StatusCode::OK);
    v["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, session: &str, message: &str) -> (StatusCode, Value) {
    let body = json!({ "message": message }).to_string();
    call(app, Method::POST, &format!("/session/{session}/message"), Some(&body)).await
}

#[tokio::test]
async fn health_and_sessions() {
    let app = app();
    let (s, v) = call(&app, Method::GET, "/health", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!({ "status": "ok" })));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn message_body_and_path_edges_exist() {
    let app = app();
    let id = new_session(&app).await;
    for message in ["who directed toy story", "the climax is great", "comedy films"] {
        let (s, body) = say(&app, &id, message).await;
        assert_eq!(s, StatusCode::OK, "{body}");
        for key in ["response", "v_start", "v_selected", "path", "knowledge_text"] {
            assert!(body.get(key).is_some(), "{key} missing");
        }
        let path = body["path"].as_array().unwrap();
        assert_eq!(path.len(), HORIZON);

        let mut at = body["v_start"].as_u64().unwrap();
        for hop in path {
            let label = hop["edge_label"].as_str().unwrap();
            let dst = hop["vertex_id"].as_u64().unwrap();
            if label == NO_OP {
                assert_eq!(dst, at);
            } else {
                let (s, vertex) = call(&app, Method::GET, &format!("/graph/vertex/{at}"), None).await;
                assert_eq!(s, StatusCode::OK);
                let found = vertex["out_edges"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .any(|e| e["edge_label"] == label && e["vertex_id"] == dst);
                assert!(found, "{at} -{label}-> {dst} is not an edge");
            }
            let top = hop["step_distribution_top5"].as_array().unwrap();
            assert!(!top.is_empty() && top.len() <= 5);
            let mass: f64 = top.iter().map(|e| e["prob"].as_f64().unwrap()).sum();
            assert!(mass <= 1.0 + 1e-9);
            let (_, shown) = call(&app, Method::GET, &format!("/graph/vertex/{dst}"), None).await;
            assert_eq!(hop["surface"], shown["surface"]);
            at = dst;
        }
        assert_eq!(at, body["v_selected"].as_u64().unwrap());
        let (_, selected) = call(&app, Method::GET, &format!("/graph/vertex/{at}"), None).await;
        assert_eq!(body["knowledge_text"], selected["surface"]);
    }
}

#[tokio::test]
async fn greedy_responses_repeat_and_graph_is_untouched() {
    let engine = engine(1);
    let app = router(AppState::new(engine.clone()));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    let first = say(&app, &a, "what about inside out").await;
    let second = say(&app, &b, "what about inside out").await;
    let third = say(&app, &a, "what about inside out").await;
    assert_eq!(first, second);
    assert_eq!(first, third);
    assert_eq!(engine.graph(), &twenty_vertex_graph());
}

#[tokio::test]
async fn history_is_per_session_and_append_only() {
    let app = app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    say(&app, &a, "toy story").await;
    say(&app, &b, "pete docter").await;
    say(&app, &a, "drama").await;
    say(&app, &a, "").await;

    let (s, h) = call(&app, Method::GET, &format!("/session/{a}/history"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["session_id"], a.as_str());
    let messages: Vec<&str> = h["turns"].as_array().unwrap().iter().map(|t| t["message"].as_str().unwrap()).collect();
    assert_eq!(messages, ["toy story", "drama"], "failed turns are not recorded");
    let (_, h) = call(&app, Method::GET, &format!("/session/{b}/history"), None).await;
    assert_eq!(h["turns"].as_array().unwrap().len(), 1);
    let turn = &h["turns"][0];
    for key in ["message", "v_start", "v_selected", "response"] {
        assert!(turn.get(key).is_some(), "{key}");
    }
}

#[tokio::test]
async fn errors() {
    let app = app();
    let id = new_session(&app).await;
    let (s, _) = say(&app, "s999", "hello").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/session/nope/history", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let uri = format!("/session/{id}/message");
    for bad in ["not json", "{}", "{\"message\": 3}", "[]"] {
        let (s, v) = call(&app, Method::POST, &uri, Some(bad)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(v["field"], "message");
    }
    let (s, v) = say(&app, &id, " ?! ").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "message");
    let (s, v) = say(&app, &id, "one two three four five six seven eight nine").await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(v["error"].as_str().unwrap().contains("9 tokens"));

    let (s, v) = call(&app, Method::GET, "/graph/vertex/abc", None).await;
    assert_eq!((s, v["field"].as_str()), (StatusCode::BAD_REQUEST, Some("id")));
    let (s, _) = call(&app, Method::GET, "/graph/vertex/20", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn vertex_inspection() {
    let app = app();
    let g = twenty_vertex_graph();
    for v in g.vertices() {
        let (s, body) = call(&app, Method::GET, &format!("/graph/vertex/{}", v.id.0), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body["surface"], v.surface.as_str());
        assert_eq!(body["out_edges"].as_array().unwrap().len(), g.out_edges(v.id).len());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions() {
    let app = router(AppState::new(engine(4)));
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = new_session(&app).await;
            let msg = if i % 2 == 0 { "toy story" } else { "adventure" };
            for _ in 0..3 {
                let (s, _) = say(&app, &id, msg).await;
                assert_eq!(s, StatusCode::OK);
            }
            let (_, h) = call(&app, Method::GET, &format!("/session/{id}/history"), None).await;
            (i, h["turns"].as_array().unwrap().len(), say(&app, &id, msg).await.1)
        }));
    }
    let mut bodies = Vec::new();
    for h in handles {
        let (i, turns, body) = h.await.unwrap();
        assert_eq!(turns, 3);
        bodies.push((i % 2, body));
    }
    for (parity, body) in &bodies {
        let same = bodies.iter().find(|(p, _)| p == parity).unwrap();
        assert_eq!(&same.1, body);
    }
}
