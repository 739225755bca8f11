//! HTTP service over a loaded [`Engine`].
//!
//! Handlers run the same engine calls as the CLI on the blocking pool, under
//! a per-request deadline. Error bodies are `{"error": ..}` plus `"field"`
//! (400) or `"stage"` (503, and 500 for stage-tagged internal failures).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::audio::decode_wav;
use crate::config::EngineConfig;
use crate::encoder::{AudioInput, UnifiedQuery};
use crate::engine::{AnswerOptions, Engine};
use crate::error::{Error, Result, Stage};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, Copy)]
pub struct ServiceOptions {
    pub k_default: usize,
    pub answer: AnswerOptions,
    pub deadline: Duration,
}

impl ServiceOptions {
    pub fn from_config(cfg: &EngineConfig) -> Self {
        Self {
            k_default: cfg.k_default,
            answer: AnswerOptions {
                k: cfg.k_default,
                n_samples: cfg.n_samples,
                cot: cfg.cot,
                temperature: cfg.temperature,
            },
            deadline: cfg.request_deadline(),
        }
    }
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self::from_config(&EngineConfig::default())
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    opts: ServiceOptions,
}

pub fn router(engine: Arc<Engine>, opts: ServiceOptions) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/retrieve", post(retrieve))
        .route("/v1/answer", post(answer))
        .with_state(AppState { engine, opts })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: Arc<Engine>,
    opts: ServiceOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let addr = listener.local_addr().ok();
    axum::serve(listener, router(engine, opts))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr.map(|a| a.to_string()).unwrap_or_default(), e))
}

/// A service running on its own runtime thread; stopped on drop.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| {
                Err(Error::Consistency("service thread panicked".into()))
            }),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds `bind` (port 0 picks a free port) and serves in the background.
pub fn spawn(engine: Arc<Engine>, opts: ServiceOptions, bind: &str) -> Result<ServiceHandle> {
    let std_listener =
        std::net::TcpListener::bind(bind).map_err(|e| Error::io(bind, e))?;
    std_listener
        .set_nonblocking(true)
        .map_err(|e| Error::io(bind, e))?;
    let addr = std_listener.local_addr().map_err(|e| Error::io(bind, e))?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || -> Result<()> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| Error::io("tokio runtime", e))?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)
                .map_err(|e| Error::io(addr.to_string(), e))?;
            serve(listener, engine, opts, async {
                let _ = rx.await;
            })
            .await
        })
    });
    Ok(ServiceHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}

enum ApiError {
    BadRequest { field: &'static str, message: String },
    Failed(Error),
    Deadline(Duration),
}

impl ApiError {
    fn field(field: &'static str, message: impl Into<String>) -> Self {
        ApiError::BadRequest {
            field,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest { field, message } => (
                StatusCode::BAD_REQUEST,
                json!({"error": message, "field": field}),
            ),
            ApiError::Deadline(d) => (
                StatusCode::GATEWAY_TIMEOUT,
                json!({"error": format!("request exceeded deadline of {} ms", d.as_millis())}),
            ),
            ApiError::Failed(e) => {
                let status = if e.is_unavailable() {
                    StatusCode::SERVICE_UNAVAILABLE
                } else if matches!(
                    e.root(),
                    Error::InvalidArgument(_) | Error::AudioDecode(_) | Error::DegenerateProjection
                ) {
                    StatusCode::BAD_REQUEST
                } else {
                    StatusCode::INTERNAL_SERVER_ERROR
                };
                let mut body = json!({"error": e.to_string()});
                if let Some(stage) = e.stage() {
                    body["stage"] = json!(stage);
                }
                (status, body)
            }
        };
        (status, Json(body)).into_response()
    }
}

/// A query request body, validated field by field.
struct QueryRequest {
    query_id: String,
    query: UnifiedQuery,
    k: Option<usize>,
    n_samples: Option<usize>,
    cot: Option<bool>,
}

fn opt_str(obj: &Map<String, Value>, field: &'static str) -> Result<Option<String>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ApiError::field(field, format!("{field} must be a string"))),
    }
}

fn opt_positive(obj: &Map<String, Value>, field: &'static str) -> Result<Option<usize>, ApiError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => Ok(Some(n as usize)),
            _ => Err(ApiError::field(field, format!("{field} must be an integer >= 1"))),
        },
    }
}

fn parse_request(body: &[u8], allowed: &[&str]) -> Result<QueryRequest, ApiError> {
    let value: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::field("body", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ApiError::field("body", "request body must be a JSON object"))?;
    if let Some(unknown) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ApiError::BadRequest {
            field: "body",
            message: format!("unknown field {unknown:?}"),
        });
    }
    let instruction = opt_str(obj, "instruction")?
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ApiError::field("instruction", "instruction must be a non-empty string"))?;
    let text = opt_str(obj, "text")?;
    let audio = match opt_str(obj, "audio_b64")? {
        None => None,
        Some(b64) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.as_bytes())
                .map_err(|e| ApiError::field("audio_b64", format!("invalid base64: {e}")))?;
            decode_wav(&bytes).map_err(|e| ApiError::field("audio_b64", e.to_string()))?;
            Some(AudioInput::Wav(bytes.into()))
        }
    };
    if text.is_none() && audio.is_none() {
        return Err(ApiError::field("text", "query needs text, audio_b64, or both"));
    }
    let query = UnifiedQuery::new(instruction, text, audio)
        .map_err(|e| ApiError::field("body", e.to_string()))?;
    let cot = match obj.get("cot") {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => return Err(ApiError::field("cot", "cot must be a boolean")),
    };
    Ok(QueryRequest {
        query_id: opt_str(obj, "query_id")?.unwrap_or_else(|| "q".to_owned()),
        query,
        k: opt_positive(obj, "k")?,
        n_samples: opt_positive(obj, "n_samples")?,
        cot,
    })
}

async fn run_blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T> + Send + 'static,
{
    let engine = Arc::clone(&state.engine);
    let task = tokio::task::spawn_blocking(move || f(&engine));
    match tokio::time::timeout(state.opts.deadline, task).await {
        Err(_) => Err(ApiError::Deadline(state.opts.deadline)),
        Ok(Err(join)) => Err(ApiError::Failed(Error::Consistency(format!(
            "request task failed: {join}"
        )))),
        Ok(Ok(r)) => r.map_err(ApiError::Failed),
    }
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "dim": state.engine.store().dim(),
        "count": state.engine.store().len(),
    }))
}

#[derive(Serialize)]
struct RetrieveResponse {
    #[serde(flatten)]
    result: RetrievalResult,
    latency_s: f64,
}

const RETRIEVE_FIELDS: &[&str] = &["query_id", "instruction", "text", "audio_b64", "k"];
const ANSWER_FIELDS: &[&str] = &[
    "query_id",
    "instruction",
    "text",
    "audio_b64",
    "k",
    "n_samples",
    "cot",
];

async fn retrieve(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req = parse_request(&body, RETRIEVE_FIELDS)?;
    let k = req.k.unwrap_or(state.opts.k_default);
    let (result, latency) = run_blocking(&state, move |engine| {
        engine
            .retrieve(&req.query_id, &req.query, k)
            .map_err(|e| e.at(Stage::Retrieval))
    })
    .await?;
    Ok(Json(RetrieveResponse {
        result,
        latency_s: latency.as_secs_f64(),
    })
    .into_response())
}

async fn answer(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req = parse_request(&body, ANSWER_FIELDS)?;
    let defaults = state.opts.answer;
    let opts = AnswerOptions {
        k: req.k.unwrap_or(state.opts.k_default),
        n_samples: req.n_samples.unwrap_or(defaults.n_samples),
        cot: req.cot.unwrap_or(defaults.cot),
        temperature: defaults.temperature,
    };
    if !state.engine.has_generator() {
        return Err(ApiError::Failed(
            Error::GeneratorUnavailable("no generator backend configured".into()).at(Stage::Generation),
        ));
    }
    let record = run_blocking(&state, move |engine| engine.answer(&req.query_id, &req.query, &opts)).await?;
    Ok(Json(record).into_response())
}
