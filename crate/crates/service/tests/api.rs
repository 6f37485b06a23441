use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hyperrestore::datasets::{encode_png, synthetic_corpus};
use hyperrestore::estimator::EstimatorNet;
use hyperrestore::{degrade, ArchConfig, Checkpoint, HyperRestoreModel, LevelRange, Task, Tensor, TrainConfig};
use hyperrestore_service::{router, AppState, ModelResponse, ServiceConfig, SessionResponse};
use tower::ServiceExt;

const BOUNDARY: &str = "XtestboundaryX";

fn untrained(estimator: bool) -> Checkpoint {
    let range = LevelRange::new(10.0, 50.0).unwrap();
    let mut model = HyperRestoreModel::init(ArchConfig::new(4, 1), Task::Noise, range, 1).unwrap();
    if estimator {
        model.estimator = Some(EstimatorNet::init(2, 30.0));
    }
    Checkpoint::new(model, None)
}

fn app_with(ckpt: Option<Checkpoint>, config: ServiceConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(match ckpt {
        Some(c) => AppState::with_checkpoint(config, c),
        None => AppState::new(config),
    });
    (router(state.clone()), state)
}

fn app(ckpt: Option<Checkpoint>) -> Router {
    app_with(ckpt, ServiceConfig::default()).0
}

fn multipart(parts: &[(&str, &[u8])]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\n\
                 Content-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/api/session")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn test_image(size: usize) -> Tensor<f32> {
    synthetic_corpus(size).unwrap().swap_remove(4).pixels
}

async fn open_session(app: &Router, image: &Tensor<f32>) -> SessionResponse {
    let png = encode_png(image).unwrap();
    let (status, _, body) = send(app, multipart(&[("image", &png)])).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn upload_echoes_dimensions() {
    let app = app(Some(untrained(false)));
    let s = open_session(&app, &test_image(64)).await;
    assert_eq!((s.width, s.height), (64, 64));
    assert!(s.estimated_level.is_none());
    assert!(!s.session_id.is_empty());
}

#[tokio::test]
async fn corrupt_upload_is_unsupported() {
    let app = app(Some(untrained(false)));
    let (status, _, _) = send(&app, multipart(&[("image", b"definitely not a png")])).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let plain = Request::post("/api/session").header("content-type", "text/plain").body(Body::from("x")).unwrap();
    assert_eq!(send(&app, plain).await.0, StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let config = ServiceConfig { max_upload_bytes: 1000, ..ServiceConfig::default() };
    let (app, _) = app_with(Some(untrained(false)), config);
    let png = encode_png(&test_image(64)).unwrap();
    assert!(png.len() > 1000);
    assert_eq!(send(&app, multipart(&[("image", &png)])).await.0, StatusCode::PAYLOAD_TOO_LARGE);
    let huge = vec![0u8; 200_000];
    assert_eq!(send(&app, multipart(&[("image", &huge)])).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn estimator_supplies_a_default_level() {
    let app = app(Some(untrained(true)));
    let noisy = degrade(&test_image(64), Task::Noise, 30.0, 3).unwrap();
    let s = open_session(&app, &noisy).await;
    let est = s.estimated_level.expect("estimate present");
    assert!(est.is_finite());
}

#[tokio::test]
async fn restore_errors() {
    let app = app(Some(untrained(false)));
    assert_eq!(send(&app, get("/api/restore?session=nope&level=10")).await.0, StatusCode::NOT_FOUND);
    let s = open_session(&app, &test_image(32)).await;
    for level in ["NaN", "inf", "-inf", "abc"] {
        let uri = format!("/api/restore?session={}&level={level}", s.session_id);
        assert_eq!(send(&app, get(&uri)).await.0, StatusCode::BAD_REQUEST, "level={level}");
    }
    assert_eq!(send(&app, get(&format!("/api/restore?session={}", s.session_id))).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let (app, state) = app_with(Some(untrained(false)), ServiceConfig::default());
    let s = open_session(&app, &test_image(32)).await;
    let uri = format!("/api/restore?session={}&level=25", s.session_id);
    let (status, headers, first) = send(&app, get(&uri)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(&first[..8], b"\x89PNG\r\n\x1a\n");
    let (_, _, second) = send(&app, get(&uri)).await;
    assert_eq!(first, second);
    // Levels that quantize to the same c share one kernel set.
    let near = format!("/api/restore?session={}&level=25.0001", s.session_id);
    assert_eq!(send(&app, get(&near)).await.2, first);
    assert_eq!(state.cached_kernel_sets(), 1);
}

#[tokio::test]
async fn concurrent_requests_match_sequential() {
    let levels = [5.0, 10.0, 22.5, 30.0, 41.0, 50.0, 65.0];
    let image = test_image(32);

    let seq_app = app(Some(untrained(false)));
    let s = open_session(&seq_app, &image).await;
    let mut sequential = Vec::new();
    for l in levels {
        sequential.push(send(&seq_app, get(&format!("/api/restore?session={}&level={l}", s.session_id))).await.2);
    }

    let par_app = app(Some(untrained(false)));
    let s = open_session(&par_app, &image).await;
    let handles: Vec<_> = levels
        .iter()
        .map(|l| {
            let (app, uri) = (par_app.clone(), format!("/api/restore?session={}&level={l}", s.session_id));
            tokio::spawn(async move { send(&app, get(&uri)).await.2 })
        })
        .collect();
    for (h, expect) in handles.into_iter().zip(sequential) {
        assert_eq!(h.await.unwrap(), expect);
    }
}

#[tokio::test]
async fn model_endpoint_needs_a_checkpoint() {
    let (app, state) = app_with(None, ServiceConfig::default());
    assert_eq!(send(&app, get("/api/model")).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let s = open_session(&app, &test_image(32)).await;
    let uri = format!("/api/restore?session={}&level=20", s.session_id);
    assert_eq!(send(&app, get(&uri)).await.0, StatusCode::SERVICE_UNAVAILABLE);

    let ckpt = untrained(true);
    let expect = ckpt.model.parameter_breakdown();
    state.set_checkpoint(ckpt.clone());
    let (status, _, body) = send(&app, get("/api/model")).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.parameters, expect);
    assert_eq!(info.range, LevelRange::new(10.0, 50.0).unwrap());
    assert_eq!(info.header, ckpt.header());
    assert!(info.has_estimator);
    assert_eq!(send(&app, get(&uri)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let config = ServiceConfig { session_ttl: Duration::ZERO, ..ServiceConfig::default() };
    let (app, state) = app_with(Some(untrained(false)), config);
    let s = open_session(&app, &test_image(32)).await;
    let uri = format!("/api/restore?session={}&level=20", s.session_id);
    assert_eq!(send(&app, get(&uri)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn root_serves_a_page() {
    let (status, headers, _) = send(&app(None), get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers["content-type"].to_str().unwrap().starts_with("text/html"));

    let dir = tempfile_dir();
    std::fs::write(dir.join("index.html"), "<p>bundle</p>").unwrap();
    let config = ServiceConfig { static_dir: Some(dir.clone()), ..ServiceConfig::default() };
    let (app, _) = app_with(None, config);
    let (status, _, body) = send(&app, get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>bundle</p>");
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hyperrestore-ui-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// A briefly trained model restores better at the true level than at a
/// level far outside its range.
#[tokio::test]
async fn trained_level_beats_a_far_level() {
    let mut cfg = TrainConfig::new(Task::Noise, vec![10.0, 50.0], 150);
    cfg.arch = ArchConfig::new(8, 2);
    cfg.batch_size = 4;
    cfg.patch_size = 32;
    cfg.seed = 3;
    let corpus = synthetic_corpus(64).unwrap();
    let out = tokio::task::spawn_blocking(move || hyperrestore::train(&cfg, &corpus, |_| {}).unwrap())
        .await
        .unwrap();
    let app = app(Some(Checkpoint::new(out.model, None)));

    let clean = test_image(64);
    let noisy = degrade(&clean, Task::Noise, 10.0, 11).unwrap();
    let (np, cp) = (encode_png(&noisy).unwrap(), encode_png(&clean).unwrap());
    let (status, _, body) = send(&app, multipart(&[("image", &np), ("reference", &cp)])).await;
    assert_eq!(status, StatusCode::OK);
    let s: SessionResponse = serde_json::from_slice(&body).unwrap();
    let score = |level: f64| {
        let (app, uri) = (app.clone(), format!("/api/restore?session={}&level={level}", s.session_id));
        async move {
            let (_, headers, _) = send(&app, get(&uri)).await;
            headers["x-psnr"].to_str().unwrap().parse::<f64>().unwrap()
        }
    };
    let (at_level, far) = (score(10.0).await, score(250.0).await);
    assert!(at_level > far, "{at_level} vs {far}");
}
