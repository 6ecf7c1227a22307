//! HTTP/JSON inference service over a loaded denoiser checkpoint.
//!
//! Endpoints:
//!
//! - `GET  /api/v1/health` returns `{"status": "ok", "model": <id>}`
//! - `GET  /api/v1/conditions` returns the checkpoint's three vocabularies
//! - `POST /api/v1/sample` takes `{character, script, style, seed?}`
//! - `POST /api/v1/inpaint` takes `{image, mask, character, script, style,
//!   jump_len?, n_resample?, seed?}` with base64 PNGs (mask: 255 = inpaint)
//!
//! Generations run on a blocking thread pool behind a FIFO gate of
//! `workers` slots and `max_pending` queue places; beyond that, 429.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use callipaint::corpus::{ConditionLabel, Vocabularies};
use callipaint::denoiser::{load_checkpoint, Checkpoint};
use callipaint::diffusion::{sample, TraceOptions};
use callipaint::image::{GlyphImage, Mask};
use callipaint::repaint::{build_time_plan, inpaint, InpaintConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

pub const ENV_CHECKPOINT: &str = "CALLIPAINT_CHECKPOINT";
pub const ENV_BIND: &str = "CALLIPAINT_BIND";
pub const ENV_WORKERS: &str = "CALLIPAINT_WORKERS";
pub const ENV_MAX_PENDING: &str = "CALLIPAINT_MAX_PENDING";

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_WORKERS: usize = 2;
pub const DEFAULT_MAX_PENDING: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("loading checkpoint: {0}")]
    Checkpoint(#[from] callipaint::Error),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub bind: SocketAddr,
    pub workers: usize,
    pub max_pending: usize,
}

impl ServiceConfig {
    pub fn new(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            workers: DEFAULT_WORKERS,
            max_pending: DEFAULT_MAX_PENDING,
        }
    }
}

/// Bounded FIFO admission for blocking jobs.
#[derive(Debug)]
pub struct Gate {
    slots: Semaphore,
    admitted: AtomicUsize,
    capacity: usize,
}

struct Admission<'a>(&'a AtomicUsize);

impl Drop for Admission<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Gate {
    pub fn new(workers: usize, max_pending: usize) -> Self {
        Self {
            slots: Semaphore::new(workers),
            admitted: AtomicUsize::new(0),
            capacity: workers + max_pending,
        }
    }

    /// Jobs running or waiting.
    pub fn load(&self) -> usize {
        self.admitted.load(Ordering::SeqCst)
    }

    /// Runs `job` once a worker slot frees up, in arrival order. `None` when
    /// the queue is full.
    pub async fn run<T, F>(&self, job: F) -> Option<std::thread::Result<T>>
    where
        F: FnOnce() -> T + Send + 'static,
        T: Send + 'static,
    {
        let admitted = self
            .admitted
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.capacity).then_some(n + 1));
        if admitted.is_err() {
            return None;
        }
        let _admission = Admission(&self.admitted);
        // Tokio's semaphore hands out permits in request order.
        let _permit = self.slots.acquire().await.expect("semaphore never closed");
        Some(tokio::task::spawn_blocking(job).await.map_err(|e| e.into_panic()))
    }
}

#[derive(Debug)]
pub struct AppState {
    pub checkpoint: Checkpoint,
    pub model_id: String,
    pub gate: Gate,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint, workers: usize, max_pending: usize) -> Result<Self, ServiceError> {
        if workers == 0 {
            return Err(ServiceError::Config("worker count must be positive".into()));
        }
        let model_id = model_id(&checkpoint)?;
        Ok(Self {
            checkpoint,
            model_id,
            gate: Gate::new(workers, max_pending),
        })
    }
}

/// `sha256:` plus the first 16 hex digits of the serialized checkpoint.
pub fn model_id(checkpoint: &Checkpoint) -> Result<String, ServiceError> {
    let digest = Sha256::digest(checkpoint.to_bytes()?);
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    Ok(format!("sha256:{hex}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub character: String,
    pub script: String,
    pub style: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintRequest {
    /// Base64 grayscale PNG at model resolution.
    pub image: String,
    /// Base64 PNG; values >= 128 mark pixels to regenerate.
    pub mask: String,
    pub character: String,
    pub script: String,
    pub style: String,
    #[serde(default)]
    pub jump_len: Option<usize>,
    #[serde(default)]
    pub n_resample: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    /// Base64 grayscale PNG.
    pub image: String,
    pub seed: u64,
    /// Network evaluations performed.
    pub steps: usize,
    pub elapsed_ms: u64,
    pub model: String,
}

/// Error body: `{"error": ..., "field": ..., "seed": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            error: error.into(),
            field: None,
            seed: None,
        }
    }

    fn field(status: StatusCode, field: &str, error: impl Into<String>) -> Self {
        Self {
            field: Some(field.to_string()),
            ..Self::new(status, error)
        }
    }

    fn generation(err: callipaint::Error, seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("generation failed: {err}"))
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|r| ApiError::new(StatusCode::BAD_REQUEST, r.body_text()))
}

fn resolve(vocab: &Vocabularies, character: &str, script: &str, style: &str) -> Result<ConditionLabel, ApiError> {
    vocab.resolve(character, script, style).map_err(|e| match e {
        callipaint::Error::UnknownName { field, .. } => ApiError::field(StatusCode::BAD_REQUEST, field, e.to_string()),
        other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()),
    })
}

fn decode_png(field: &str, data: &str, resolution: (usize, usize)) -> Result<Vec<u8>, ApiError> {
    let bytes = BASE64
        .decode(data.trim())
        .map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, field, format!("invalid base64: {e}")))?;
    let image = GlyphImage::decode_png(&bytes).map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, field, e.to_string()))?;
    let (h, w) = image.resolution();
    if h > resolution.0 || w > resolution.1 {
        return Err(ApiError::field(
            StatusCode::PAYLOAD_TOO_LARGE,
            field,
            format!("{h}x{w} exceeds the model resolution {}x{}", resolution.0, resolution.1),
        ));
    }
    if (h, w) != resolution {
        return Err(ApiError::field(
            StatusCode::BAD_REQUEST,
            field,
            format!(
                "{h}x{w} does not match the model resolution {}x{}",
                resolution.0, resolution.1
            ),
        ));
    }
    Ok(image.to_bytes())
}

async fn run_job<F>(state: &Arc<AppState>, seed: u64, job: F) -> Result<GlyphImage, ApiError>
where
    F: FnOnce(&AppState) -> callipaint::Result<GlyphImage> + Send + 'static,
{
    let shared = Arc::clone(state);
    match state.gate.run(move || job(&shared)).await {
        None => Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "generation queue is full")),
        Some(Err(_)) => Err(ApiError {
            seed: Some(seed),
            ..ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "generation panicked")
        }),
        Some(Ok(result)) => result.map_err(|e| ApiError::generation(e, seed)),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model": state.model_id }))
}

async fn conditions(State(state): State<Arc<AppState>>) -> Json<Vocabularies> {
    Json(state.checkpoint.vocab.clone())
}

async fn handle_sample(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SampleRequest>, JsonRejection>,
) -> Result<Json<GenerationResponse>, ApiError> {
    let req = json_body(body)?;
    let cond = resolve(&state.checkpoint.vocab, &req.character, &req.script, &req.style)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let start = Instant::now();
    let image = run_job(&state, seed, move |s| {
        let schedule = s.checkpoint.schedule.build()?;
        Ok(sample(&s.checkpoint.params, &cond, &schedule, seed, TraceOptions::NONE)?.0)
    })
    .await?;
    Ok(Json(GenerationResponse {
        image: BASE64.encode(image.encode_png()),
        seed,
        steps: state.checkpoint.schedule.steps,
        elapsed_ms: start.elapsed().as_millis() as u64,
        model: state.model_id.clone(),
    }))
}

async fn handle_inpaint(
    State(state): State<Arc<AppState>>,
    body: Result<Json<InpaintRequest>, JsonRejection>,
) -> Result<Json<GenerationResponse>, ApiError> {
    let req = json_body(body)?;
    let resolution = state.checkpoint.params.config().resolution;
    let image_bytes = decode_png("image", &req.image, resolution)?;
    let mask_bytes = decode_png("mask", &req.mask, resolution)?;
    let cond = resolve(&state.checkpoint.vocab, &req.character, &req.script, &req.style)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut config = InpaintConfig::new(seed);
    config.schedule = state.checkpoint.schedule;
    config.jump_len = req.jump_len.unwrap_or(config.jump_len);
    config.n_resample = req.n_resample.unwrap_or(config.n_resample);
    let plan = build_time_plan(config.schedule.steps, config.jump_len, config.n_resample).map_err(|e| {
        let field = if config.n_resample == 0 { "n_resample" } else { "jump_len" };
        ApiError::field(StatusCode::BAD_REQUEST, field, e.to_string())
    })?;
    let (h, w) = resolution;
    let image = GlyphImage::from_bytes(h, w, &image_bytes)
        .map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "image", e.to_string()))?
        .to_model();
    let mask = Mask::from_bits(h, w, mask_bytes.iter().map(|&g| u8::from(g >= 128)).collect())
        .map_err(|e| ApiError::field(StatusCode::BAD_REQUEST, "mask", e.to_string()))?;
    let start = Instant::now();
    let job_mask = mask.clone();
    let out = run_job(&state, seed, move |s| {
        Ok(inpaint(&s.checkpoint.params, &image, &job_mask, &cond, &config)?.0)
    })
    .await?;
    let out_bytes = out.to_bytes();
    let preserved = mask
        .bits()
        .iter()
        .zip(out_bytes.iter().zip(&image_bytes))
        .all(|(&m, (a, b))| m == 1 || a == b);
    if !preserved {
        return Err(ApiError {
            seed: Some(seed),
            ..ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "unmasked pixels changed during inpainting")
        });
    }
    Ok(Json(GenerationResponse {
        image: BASE64.encode(out.encode_png()),
        seed,
        steps: plan.denoise_count(),
        elapsed_ms: start.elapsed().as_millis() as u64,
        model: state.model_id.clone(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/conditions", get(conditions))
        .route("/api/v1/sample", post(handle_sample))
        .route("/api/v1/inpaint", post(handle_inpaint))
        .with_state(state)
}

/// Serves `state` on `listener` until `shutdown` resolves, then waits for
/// in-flight requests to finish.
pub async fn serve_with_shutdown(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down after in-flight requests");
}

/// Loads the checkpoint, binds, and serves until SIGINT or SIGTERM.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let checkpoint = load_checkpoint(&config.checkpoint)?;
    let state = Arc::new(AppState::new(checkpoint, config.workers, config.max_pending)?);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind,
            source,
        })?;
    tracing::info!(addr = %config.bind, model = %state.model_id, "listening");
    serve_with_shutdown(listener, state, shutdown_signal()).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn gate_rejects_beyond_capacity() {
        let gate = Arc::new(Gate::new(1, 1));
        let (tx, rx) = std::sync::mpsc::channel::<()>();
        let rx = Arc::new(std::sync::Mutex::new(rx));
        let blocker = |rx: Arc<std::sync::Mutex<std::sync::mpsc::Receiver<()>>>| move || rx.lock().unwrap().recv().unwrap();
        let g1 = Arc::clone(&gate);
        let r1 = Arc::clone(&rx);
        let first = tokio::spawn(async move { g1.run(blocker(r1)).await });
        while gate.load() < 1 {
            tokio::task::yield_now().await;
        }
        let g2 = Arc::clone(&gate);
        let r2 = Arc::clone(&rx);
        let second = tokio::spawn(async move { g2.run(blocker(r2)).await });
        while gate.load() < 2 {
            tokio::task::yield_now().await;
        }
        assert!(gate.run(|| ()).await.is_none());
        tx.send(()).unwrap();
        tx.send(()).unwrap();
        assert!(first.await.unwrap().unwrap().is_ok());
        assert!(second.await.unwrap().unwrap().is_ok());
        assert_eq!(gate.load(), 0);
    }

    #[tokio::test]
    async fn gate_runs_in_arrival_order() {
        let gate = Arc::new(Gate::new(1, 8));
        let order = Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut handles = Vec::new();
        for i in 0..5 {
            let (g, o) = (Arc::clone(&gate), Arc::clone(&order));
            handles.push(tokio::spawn(async move { g.run(move || o.lock().unwrap().push(i)).await }));
            while gate.load() < i + 1 && order.lock().unwrap().len() < i + 1 {
                tokio::task::yield_now().await;
            }
        }
        for h in handles {
            h.await.unwrap().unwrap().unwrap();
        }
        assert_eq!(*order.lock().unwrap(), vec![0, 1, 2, 3, 4]);
    }
}
