//! HTTP backend contract tests against a local fixture server: parsing,
//! auth propagation, retry discipline, timeout, and streaming prefill.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::HeaderMap;
use axum::response::{IntoResponse, Json, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpListener;

use omniroute_core::backend::{BackendError, DecodingParams, HttpClient, HttpConfig, ModelClient};
use omniroute_core::{MessageComposition, MessagePart, Stage};

fn composition() -> MessageComposition {
    MessageComposition::new(Stage::Decide, "decide role", vec![MessagePart::Text("what is 2+2?".into())])
        .unwrap()
}

fn config(addr: SocketAddr) -> HttpConfig {
    HttpConfig {
        endpoint: format!("http://{addr}/v1/chat/completions"),
        model: "fixture-model".into(),
        auth_env: None,
        timeout_s: 2.0,
        retries: 0,
        stream: false,
        part_type_names: None,
    }
}

async fn serve(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    addr
}

#[tokio::test]
async fn parses_content_and_usage_and_sends_canonical_schema() {
    #[derive(Default)]
    struct Seen {
        bodies: std::sync::Mutex<Vec<Value>>,
        auth: std::sync::Mutex<Vec<Option<String>>>,
    }
    let seen = Arc::new(Seen::default());
    let state = Arc::clone(&seen);

    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |headers: HeaderMap, State(s): State<Arc<Seen>>, Json(body): Json<Value>| async move {
            s.bodies.lock().unwrap().push(body);
            s.auth
                .lock()
                .unwrap()
                .push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
            Json(json!({
                "choices": [{"message": {"content": "the answer is 4"}}],
                "usage": {"completion_tokens": 4}
            }))
        })
        .with_state(state),
    );
    let addr = serve(app).await;

    std::env::set_var("OMNIROUTE_HTTP_TEST_TOKEN", "sekrit");
    let mut cfg = config(addr);
    cfg.auth_env = Some("OMNIROUTE_HTTP_TEST_TOKEN".into());
    let client = HttpClient::new(cfg).unwrap();

    let out = client.generate(&composition(), &DecodingParams::default()).await.unwrap();
    assert_eq!(out.text, "the answer is 4");
    assert_eq!(out.tokens, 4);
    assert_eq!(out.prefill_s, None, "non-streaming reports prefill as unavailable");
    assert!(out.gen_s_per_tok >= 0.0);

    let bodies = seen.bodies.lock().unwrap();
    let body = &bodies[0];
    assert_eq!(body["model"], "fixture-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"][0]["type"], "text");
    let auth = seen.auth.lock().unwrap();
    assert_eq!(auth[0].as_deref(), Some("Bearer sekrit"));
    assert_eq!(client.call_log().len(), 1);
}

#[tokio::test]
async fn retries_server_errors_until_success() {
    let hits = Arc::new(AtomicUsize::new(0));
    let state = Arc::clone(&hits);
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |State(h): State<Arc<AtomicUsize>>| async move {
            if h.fetch_add(1, Ordering::SeqCst) == 0 {
                (axum::http::StatusCode::INTERNAL_SERVER_ERROR, "boom").into_response()
            } else {
                Json(json!({
                    "choices": [{"message": {"content": "recovered"}}],
                    "usage": {"completion_tokens": 1}
                }))
                .into_response()
            }
        })
        .with_state(state),
    );
    let addr = serve(app).await;

    let mut cfg = config(addr);
    cfg.retries = 1;
    let client = HttpClient::new(cfg).unwrap();
    let out = client.generate(&composition(), &DecodingParams::default()).await.unwrap();
    assert_eq!(out.text, "recovered");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let state = Arc::clone(&hits);
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |State(h): State<Arc<AtomicUsize>>| async move {
            h.fetch_add(1, Ordering::SeqCst);
            (axum::http::StatusCode::UNPROCESSABLE_ENTITY, "bad request shape")
        })
        .with_state(state),
    );
    let addr = serve(app).await;

    let mut cfg = config(addr);
    cfg.retries = 3;
    let client = HttpClient::new(cfg).unwrap();
    let err = client.generate(&composition(), &DecodingParams::default()).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1, "4xx must not be retried");
}

#[tokio::test]
async fn partial_response_is_never_retried() {
    // Raw TCP server: sends valid headers plus half a body, then drops the
    // connection. The client must fail without a second attempt.
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let server_hits = Arc::clone(&hits);
    tokio::spawn(async move {
        loop {
            let (mut socket, _) = listener.accept().await.unwrap();
            server_hits.fetch_add(1, Ordering::SeqCst);
            let mut buf = [0u8; 4096];
            use tokio::io::AsyncReadExt;
            let _ = socket.read(&mut buf).await;
            let response = "HTTP/1.1 200 OK\r\ncontent-length: 1000\r\ncontent-type: application/json\r\n\r\n{\"choices\":[{";
            socket.write_all(response.as_bytes()).await.unwrap();
            socket.flush().await.unwrap();
            drop(socket);
        }
    });

    let mut cfg = config(addr);
    cfg.retries = 5;
    let client = HttpClient::new(cfg).unwrap();
    let err = client.generate(&composition(), &DecodingParams::default()).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "got {err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1, "partial receipt must not be retried");
}

#[tokio::test]
async fn timeouts_surface_as_timeout_errors() {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            tokio::time::sleep(std::time::Duration::from_secs(10)).await;
            Json(json!({}))
        }),
    );
    let addr = serve(app).await;

    let mut cfg = config(addr);
    cfg.timeout_s = 0.2;
    let client = HttpClient::new(cfg).unwrap();
    let err = client.generate(&composition(), &DecodingParams::default()).await.unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "got {err:?}");
}

#[tokio::test]
async fn malformed_bodies_are_reported_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let state = Arc::clone(&hits);
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |State(h): State<Arc<AtomicUsize>>| async move {
            h.fetch_add(1, Ordering::SeqCst);
            "this is not json"
        })
        .with_state(state),
    );
    let addr = serve(app).await;

    let mut cfg = config(addr);
    cfg.retries = 2;
    let client = HttpClient::new(cfg).unwrap();
    let err = client.generate(&composition(), &DecodingParams::default()).await.unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn streaming_measures_prefill_as_time_to_first_byte() {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            let chunks = vec![
                "data: {\"choices\":[{\"delta\":{\"content\":\"four\"}}]}\n\n".to_string(),
                "data: {\"choices\":[{\"delta\":{\"content\":\" exactly\"}}],\"usage\":{\"completion_tokens\":2}}\n\n"
                    .to_string(),
                "data: [DONE]\n\n".to_string(),
            ];
            let stream = futures::stream::iter(chunks.into_iter().map(|c| {
                std::thread::sleep(std::time::Duration::from_millis(20));
                Ok::<_, std::io::Error>(c)
            }));
            Response::builder()
                .header("content-type", "text/event-stream")
                .body(Body::from_stream(stream))
                .unwrap()
        }),
    );
    let addr = serve(app).await;

    let mut cfg = config(addr);
    cfg.stream = true;
    let client = HttpClient::new(cfg).unwrap();
    let out = client.generate(&composition(), &DecodingParams::default()).await.unwrap();
    assert_eq!(out.text, "four exactly");
    assert_eq!(out.tokens, 2);
    let prefill = out.prefill_s.expect("streaming reports prefill");
    assert!(prefill > 0.0 && prefill < 2.0);
}
