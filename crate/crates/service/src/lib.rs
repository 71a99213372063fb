//! HTTP service for interactive segmentation.
//!
//! Upload an image once, then post boxes against its id. Superpixel clusters
//! are computed at upload time so repeated segmentations of the same image
//! only pay for the solver loop.

pub mod rle;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use loosecut::bench::Method;
use loosecut::clustering::build_clusters;
use loosecut::solver::{segment_with_clusters, Init, TraceEntry};
use loosecut::{BoundingBox, RgbImage, SolverConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use rle::RleMask;
use store::{ClusterParams, Session, SessionStore};

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    /// Server-side defaults; requests override individual fields.
    pub defaults: Arc<SolverConfig>,
}

impl AppState {
    pub fn new(store: SessionStore, defaults: SolverConfig) -> Self {
        Self {
            store: Arc::new(store),
            defaults: Arc::new(defaults),
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(SessionStore::default(), SolverConfig::default())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn unknown_image(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_image",
            format!("no image with id {id:?}"),
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<loosecut::Error> for ApiError {
    fn from(e: loosecut::Error) -> Self {
        use loosecut::Error as E;
        match e {
            E::DegenerateInit(msg) => Self::bad_request("degenerate_init", msg),
            E::Decode(msg) => Self::bad_request("decode_error", msg),
            E::InvalidInput(msg) => Self::bad_request("invalid_input", msg),
            E::DimensionMismatch { .. } => Self::bad_request("invalid_input", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub method: Option<String>,
    /// Partial configuration; keys mirror the solver configuration fields.
    #[serde(default)]
    pub config: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub e_gc: f64,
    pub e_lc: f64,
    pub e_total: f64,
}

impl From<&TraceEntry> for TracePoint {
    fn from(t: &TraceEntry) -> Self {
        Self {
            iter: t.iteration,
            e_gc: t.e_gc,
            e_lc: t.e_lc,
            e_total: t.e_total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: RleMask,
    pub trace: Vec<TracePoint>,
    pub runtime_ms: u64,
    pub iterations: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/images", post(upload))
        .route("/api/images/{id}", get(fetch_image))
        .route("/api/segment", post(segment))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "ok": true }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn upload(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<UploadResponse>> {
    let defaults = state.defaults.clone();
    let session = blocking(move || {
        let image = RgbImage::decode(&body)?;
        let params = ClusterParams::of(&defaults);
        let clusters = build_clusters(
            &image,
            params.superpixel_count,
            params.compactness,
            params.n_clusters,
            params.seed,
        )?;
        Ok(Session {
            image,
            bytes: body.to_vec(),
            clusters,
            cluster_params: params,
        })
    })
    .await?;
    let (width, height) = session.image.dims();
    let id = state.store.insert(session);
    log::info!("stored image {id} ({width}x{height})");
    Ok(Json(UploadResponse { id, width, height }))
}

fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else if bytes.len() > 1 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        "image/x-portable-anymap"
    } else {
        "application/octet-stream"
    }
}

async fn fetch_image(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.store.get(&id).ok_or_else(|| ApiError::unknown_image(&id))?;
    let ct = content_type(&session.bytes);
    Ok(([(header::CONTENT_TYPE, ct)], session.bytes.clone()).into_response())
}

/// Overlays the request's keys on the server defaults. Unknown keys are rejected.
fn merged_config(defaults: &SolverConfig, overrides: Option<&Value>) -> ApiResult<SolverConfig> {
    let Some(overrides) = overrides else {
        return Ok(defaults.clone());
    };
    let Value::Object(fields) = overrides else {
        return Err(ApiError::bad_request("invalid_config", "config must be a JSON object"));
    };
    let mut base = serde_json::to_value(defaults).map_err(|e| ApiError::internal(e.to_string()))?;
    let obj = base.as_object_mut().expect("config serializes to an object");
    for (k, v) in fields {
        obj.insert(k.clone(), v.clone());
    }
    let config: SolverConfig =
        serde_json::from_value(base).map_err(|e| ApiError::bad_request("invalid_config", e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn run_segmentation(
    session: &Session,
    request: &SegmentRequest,
    defaults: &SolverConfig,
) -> ApiResult<SegmentResponse> {
    let method = match request.method.as_deref() {
        None => Method::LooseCut,
        Some(m) => m
            .parse::<Method>()
            .map_err(|e| ApiError::bad_request("invalid_method", e.to_string()))?,
    };
    let config = method.config(&merged_config(defaults, request.config.as_ref())?);
    let (w, h) = session.image.dims();
    request
        .bbox
        .validate(w, h)
        .map_err(|e| ApiError::bad_request("invalid_box", e.to_string()))?;

    let start = Instant::now();
    let recomputed;
    let clusters = if ClusterParams::of(&config) == session.cluster_params {
        &session.clusters
    } else {
        recomputed = build_clusters(
            &session.image,
            config.superpixel_count,
            config.compactness,
            config.n_clusters,
            config.seed,
        )?;
        &recomputed
    };
    let result = segment_with_clusters(&session.image, &Init::Box(request.bbox), Some(clusters), &config)?;
    Ok(SegmentResponse {
        mask: rle::encode(&result.mask),
        trace: result.trace.iter().map(TracePoint::from).collect(),
        runtime_ms: start.elapsed().as_millis() as u64,
        iterations: result.iterations_run,
    })
}

async fn segment(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<SegmentResponse>> {
    let request: SegmentRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
    let session = state
        .store
        .get(&request.id)
        .ok_or_else(|| ApiError::unknown_image(&request.id))?;
    let defaults = state.defaults.clone();
    let response = blocking(move || run_segmentation(&session, &request, &defaults)).await?;
    Ok(Json(response))
}

/// Serves the API on `addr` until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
