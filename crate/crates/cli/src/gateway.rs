//! HTTP gateway: the full inference chain behind `POST /v1/infer`, with a
//! bounded-concurrency admission gate and graceful shutdown. Media arrives
//! by server-local path reference only; the gateway is an orchestration
//! layer, not a media store. Backend auth tokens never appear in logs or
//! response bodies.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use omniroute_core::backend::ModelClient;
use omniroute_core::pipeline::{self, PipelineConfig};
use omniroute_core::{
    validate_directive, Answer, AudioStream, Frame, ImageSet, PlanDirective, Query, StreamSet, VideoStream,
};

pub struct GatewayState {
    pub client: Arc<dyn ModelClient>,
    pub pipeline: PipelineConfig,
    pub media_root: Option<PathBuf>,
    pub check_media: bool,
    limiter: Semaphore,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl GatewayState {
    pub fn new(
        client: Arc<dyn ModelClient>,
        pipeline: PipelineConfig,
        concurrency_cap: usize,
        media_root: Option<PathBuf>,
        check_media: bool,
    ) -> Self {
        GatewayState {
            client,
            pipeline,
            media_root,
            check_media,
            limiter: Semaphore::new(concurrency_cap.max(1)),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Highest number of requests that were inside the pipeline at once.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryBody {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub options: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct AudioBody {
    pub path: String,
    pub duration_s: f64,
}

#[derive(Debug, Deserialize)]
pub struct VideoBody {
    pub path: String,
    pub duration_s: f64,
    #[serde(default)]
    pub frame_timestamps: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct ImagesBody {
    pub paths: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct InferRequest {
    pub query: QueryBody,
    #[serde(default)]
    pub audio: Option<AudioBody>,
    #[serde(default)]
    pub video: Option<VideoBody>,
    #[serde(default)]
    pub images: Option<ImagesBody>,
    #[serde(default)]
    pub plan_override: Option<PlanDirective>,
}

#[derive(Debug, Serialize)]
pub struct InferResponse {
    pub answer: Answer,
    pub plan: PlanDirective,
}

fn error_body(status: StatusCode, message: String, violations: Vec<String>) -> Response {
    let mut body = json!({ "error": message });
    if !violations.is_empty() {
        body["violations"] = json!(violations);
    }
    (status, Json(body)).into_response()
}

fn unprocessable(message: String) -> Response {
    error_body(StatusCode::UNPROCESSABLE_ENTITY, message, vec![])
}

impl GatewayState {
    fn resolve(&self, path: &str) -> PathBuf {
        match &self.media_root {
            Some(root) => root.join(path),
            None => PathBuf::from(path),
        }
    }

    #[allow(clippy::result_large_err)] // the Err is the HTTP response itself
    fn build_streams(&self, request: &InferRequest) -> Result<StreamSet, Response> {
        let mut streams = StreamSet::default();
        if let Some(a) = &request.audio {
            let path = self.resolve(&a.path);
            if self.check_media && !path.exists() {
                return Err(unprocessable(format!("audio media path not found: {}", path.display())));
            }
            streams.audio = Some(
                AudioStream::new("audio", a.duration_s, path.to_string_lossy())
                    .map_err(|e| unprocessable(format!("audio: {e}")))?,
            );
        }
        if let Some(v) = &request.video {
            let path = self.resolve(&v.path);
            if self.check_media && !path.exists() {
                return Err(unprocessable(format!("video media path not found: {}", path.display())));
            }
            let frames = v
                .frame_timestamps
                .iter()
                .enumerate()
                .map(|(i, t)| Frame { timestamp_s: *t, image: format!("{}#f{i}", path.display()) })
                .collect();
            streams.video = Some(
                VideoStream::new("video", v.duration_s, frames)
                    .map_err(|e| unprocessable(format!("video: {e}")))?,
            );
        }
        if let Some(images) = &request.images {
            let mut refs = Vec::with_capacity(images.paths.len());
            for p in &images.paths {
                let path = self.resolve(p);
                if self.check_media && !path.exists() {
                    return Err(unprocessable(format!("image media path not found: {}", path.display())));
                }
                refs.push(path.to_string_lossy().into_owned());
            }
            streams.images = Some(ImageSet { id: "images".into(), frames: refs });
        }
        if streams.is_empty() {
            return Err(unprocessable("at least one media stream is required".into()));
        }
        Ok(streams)
    }
}

async fn infer_handler(
    State(state): State<Arc<GatewayState>>,
    payload: Result<Json<InferRequest>, JsonRejection>,
) -> Response {
    let Json(request) = match payload {
        Ok(json) => json,
        Err(rejection) => {
            return error_body(StatusCode::BAD_REQUEST, format!("malformed request: {rejection}"), vec![]);
        }
    };

    let query = match Query::new(
        request.query.id.clone().unwrap_or_else(|| "request".to_string()),
        request.query.text.clone(),
        request.query.options.clone(),
        None,
    ) {
        Ok(q) => q,
        Err(e) => return unprocessable(format!("query: {e}")),
    };
    let streams = match state.build_streams(&request) {
        Ok(s) => s,
        Err(response) => return response,
    };

    let mut cfg = state.pipeline.clone();
    if let Some(directive) = request.plan_override {
        let violations = validate_directive(&directive, &streams.available());
        if !violations.is_empty() {
            return error_body(
                StatusCode::UNPROCESSABLE_ENTITY,
                "plan override violates directive invariants".into(),
                violations.iter().map(ToString::to_string).collect(),
            );
        }
        cfg.plan_override = Some(directive);
    }

    // Admission gate: wait for a slot rather than rejecting, so every
    // request completes while at most `cap` run the pipeline at once.
    let _permit = state.limiter.acquire().await.expect("limiter never closes");
    let current = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak_in_flight.fetch_max(current, Ordering::SeqCst);

    let trace = pipeline::run(&query, &streams, &cfg, state.client.as_ref()).await;

    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    match (trace.error, trace.answer, trace.directive) {
        (None, Some(answer), Some(plan)) => {
            (StatusCode::OK, Json(InferResponse { answer, plan })).into_response()
        }
        (error, _, _) => error_body(
            StatusCode::BAD_GATEWAY,
            error.unwrap_or_else(|| "run produced no answer".into()),
            vec![],
        ),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/infer", post(infer_handler))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then drain in-flight requests.
pub async fn serve_with_shutdown(
    listener: tokio::net::TcpListener,
    state: Arc<GatewayState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
