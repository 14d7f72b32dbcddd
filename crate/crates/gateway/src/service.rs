//! HTTP front door for the pipeline: `POST /chat` plus read-only admin views.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use spacegate_core::pipeline::{Pipeline, PipelineFailure};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tracing::{info, warn};
use url::Url;

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    backend: Option<Url>,
    http: reqwest::Client,
}

impl AppState {
    /// `backend` is the building API origin whose `/state` is relayed to
    /// the chat UI.
    pub fn new(pipeline: Arc<Pipeline>, backend: Option<Url>) -> Self {
        let http = reqwest::Client::builder()
            .no_proxy()
            .timeout(std::time::Duration::from_secs(5))
            .build()
            .expect("HTTP client builds");
        Self {
            pipeline,
            backend,
            http,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub message: String,
}

#[derive(Debug, Serialize)]
struct ExemplarView<'a> {
    #[serde(rename = "recordId")]
    record_id: &'a str,
    #[serde(rename = "apiId")]
    api_id: &'a str,
    order: &'a str,
}

fn error_response(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({ "error": { "kind": kind, "message": message.into() } })),
    )
        .into_response()
}

async fn chat(State(app): State<AppState>, body: Bytes) -> Response {
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    match app.pipeline.handle_message(&req.message).await {
        Ok(resp) => Json(resp).into_response(),
        Err(PipelineFailure { error, trace }) => {
            let status =
                StatusCode::from_u16(error.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (
                status,
                Json(json!({
                    "error": { "kind": error.kind(), "message": error.to_string() },
                    "trace": trace,
                })),
            )
                .into_response()
        }
    }
}

async fn healthz(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "exemplars": app.pipeline.index().len(),
        "apis": app.pipeline.registry().len(),
    }))
}

async fn apis(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!(app.pipeline.registry().iter().collect::<Vec<_>>()))
}

async fn exemplars(State(app): State<AppState>) -> Json<serde_json::Value> {
    let view: Vec<ExemplarView<'_>> = app
        .pipeline
        .index()
        .list()
        .iter()
        .map(|r| ExemplarView {
            record_id: &r.record_id,
            api_id: &r.api_id,
            order: &r.order,
        })
        .collect();
    Json(json!(view))
}

/// Relays the building backend's `GET /state`.
async fn building_state(State(app): State<AppState>) -> Response {
    let Some(base) = &app.backend else {
        return error_response(
            StatusCode::NOT_FOUND,
            "no_backend",
            "no building backend configured",
        );
    };
    let url = match base.join("state") {
        Ok(u) => u,
        Err(e) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "bad_backend_url",
                e.to_string(),
            )
        }
    };
    let resp = match app.http.get(url).send().await {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_GATEWAY, "backend_unreachable", e.to_string()),
    };
    let status = resp.status();
    match resp.bytes().await {
        Ok(body) if status.is_success() => (
            StatusCode::OK,
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response(),
        Ok(_) => error_response(
            StatusCode::BAD_GATEWAY,
            "backend_error",
            format!("backend answered {status}"),
        ),
        Err(e) => error_response(StatusCode::BAD_GATEWAY, "backend_unreachable", e.to_string()),
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    let parsed: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    if parsed.is_empty() {
        layer.allow_origin(Any)
    } else {
        layer.allow_origin(AllowOrigin::list(parsed))
    }
}

pub fn router(app: AppState, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/chat", post(chat))
        .route("/healthz", get(healthz))
        .route("/apis", get(apis))
        .route("/exemplars", get(exemplars))
        .route("/state", get(building_state))
        .layer(cors(cors_origins))
        .with_state(app)
}

/// Serves until `shutdown` resolves; in-flight requests run to completion.
pub async fn serve<F>(listener: tokio::net::TcpListener, app: Router, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    info!(?addr, "chat service listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            warn!(error = %e, "cannot listen for Ctrl-C");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    info!("shutting down");
}
