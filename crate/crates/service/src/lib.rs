//! HTTP service for interactive restoration-level tuning.
//!
//! | method | path           | body / query               | response                  |
//! |--------|----------------|----------------------------|---------------------------|
//! | POST   | `/api/session` | multipart `image`          | session JSON              |
//! | GET    | `/api/restore` | `session`, `level`         | PNG                       |
//! | GET    | `/api/model`   |                            | model JSON, 503 if absent |
//! | GET    | `/`            |                            | UI bundle                 |

mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyperrestore::datasets::{crop_to_block_multiple, decode_image, encode_png};
use hyperrestore::metrics::psnr;
use hyperrestore::{ArchConfig, CheckpointHeader, LevelRange, ParamBreakdown, Task, Tensor};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use state::{dequantize, quantize, AppState, LoadedModel, ServiceConfig, C_QUANTUM};

/// Extra room for multipart framing on top of the image size cap.
const MULTIPART_OVERHEAD: usize = 64 << 10;
/// Beyond this the conditioning scalar is meaningless and the cache key would overflow.
const MAX_ABS_C: f64 = 1e6;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionResponse {
    pub session_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_level: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelResponse {
    pub task: Task,
    pub arch: ArchConfig,
    pub range: LevelRange,
    pub parameters: ParamBreakdown,
    pub has_estimator: bool,
    pub header: CheckpointHeader,
}

#[derive(Debug, Deserialize)]
pub struct RestoreQuery {
    pub session: String,
    pub level: f64,
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes + MULTIPART_OVERHEAD;
    let api = Router::new()
        .route("/api/session", post(create_session).layer(DefaultBodyLimit::max(limit)))
        .route("/api/restore", get(restore))
        .route("/api/model", get(model_info));
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    };
    app.with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>hyperrestore</title>\
         <p>The tuning UI bundle is not installed. Start the server with <code>--static-dir</code> \
         or use the JSON API under <code>/api</code>.</p>",
    )
}

async fn model_info(State(app): State<Arc<AppState>>) -> Result<Json<ModelResponse>, ApiError> {
    let loaded = app.model().ok_or_else(no_model)?;
    let m = &loaded.model;
    Ok(Json(ModelResponse {
        task: m.task,
        arch: m.arch,
        range: m.range,
        parameters: m.parameter_breakdown(),
        has_estimator: m.estimator.is_some(),
        header: loaded.header.clone(),
    }))
}

fn no_model() -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded")
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<SessionResponse>, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.body_text()))?;
    let cap = app.config.max_upload_bytes;
    let (mut image, mut reference) = (None, None);
    while let Some(field) =
        multipart.next_field().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        if bytes.len() > cap {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("'{name}' is {} bytes; the limit is {cap}", bytes.len()),
            ));
        }
        match name.as_str() {
            "image" => image = Some(bytes),
            "reference" => reference = Some(bytes),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing 'image' field"))?;
    let image = decode_upload(&image)?;
    let reference = match reference {
        Some(bytes) => {
            let r = decode_upload(&bytes)?;
            if r.shape() != image.shape() {
                return Err(ApiError::new(StatusCode::BAD_REQUEST, "reference and image sizes differ"));
            }
            Some(r)
        }
        None => None,
    };
    let (_, height, width) = image.chw().map_err(internal)?;

    let estimated_level = match app.model() {
        Some(loaded) if loaded.model.estimator.is_some() => {
            let img = image.clone();
            tokio::task::spawn_blocking(move || loaded.model.estimate_level(&img).ok())
                .await
                .map_err(internal)?
                .filter(|v| v.is_finite())
        }
        _ => None,
    };
    let session_id = app.insert_session(image, reference);
    Ok(Json(SessionResponse { session_id, width, height, estimated_level }))
}

fn decode_upload(bytes: &[u8]) -> Result<Tensor<f32>, ApiError> {
    let t = decode_image(bytes)
        .map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("unreadable image: {e}")))?;
    crop_to_block_multiple(&t).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn restore(State(app): State<Arc<AppState>>, Query(q): Query<RestoreQuery>) -> Result<Response, ApiError> {
    if !q.level.is_finite() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("level must be finite, got {}", q.level)));
    }
    let loaded = app.model().ok_or_else(no_model)?;
    let c = loaded.model.conditioning(q.level).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if c.abs() > MAX_ABS_C {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("level {} is too far outside the trained range", q.level)));
    }
    let key = quantize(c);
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{}'", q.session));
    let restored = match app.lookup(&q.session, key).ok_or_else(unknown)? {
        Ok(hit) => hit,
        Err(inputs) => {
            let app2 = app.clone();
            let computed = tokio::task::spawn_blocking(move || -> hyperrestore::Result<state::Restored> {
                let kernels = app2.kernels_for(&loaded.model, key)?;
                let out = loaded.model.restore_with_kernels(&inputs.image, &kernels)?;
                let psnr = inputs.reference.as_deref().map(|r| psnr(r, &out)).transpose()?;
                Ok(state::Restored { png: Arc::new(encode_png(&out)?), psnr })
            })
            .await
            .map_err(internal)?
            .map_err(internal)?;
            app.store(&q.session, key, computed)
        }
    };

    let mut resp = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], restored.png.as_ref().clone()).into_response();
    let h = resp.headers_mut();
    h.insert("x-conditioning", HeaderValue::from_str(&format!("{:.3}", dequantize(key))).map_err(internal)?);
    if let Some(db) = restored.psnr {
        h.insert("x-psnr", HeaderValue::from_str(&format!("{db:.6}")).map_err(internal)?);
    }
    Ok(resp)
}
