//! HTTP service over a literature-review store.
//!
//! Every response body is JSON. Errors are `{"code": ..., "message": ...}`.
//! Mutating requests carrying an `Idempotency-Key` header are answered from a
//! cache when retried with the same key.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use slr_core::llm::{transport_for, Gateway, ProviderConfig};
use slr_core::workspace::{Workspace, WorkspaceError};
use slr_core::{Clock, SystemClock};

mod error;
pub mod jobs;
mod routes;

pub use error::{ApiError, ErrorBody};
pub use jobs::{CancelOutcome, JobSpec, JobStatus, JobView};
pub use routes::{CentralityView, ConstraintsEdit, EvolutionView, GoldEntry, GoldUpload};

pub const DEFAULT_TOKEN_ENV: &str = "SLR_SERVICE_TOKEN";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub store_root: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Name of the environment variable holding the shared bearer token.
    /// Auth is off when the variable is unset or empty.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    /// Script for providers with id `mock`.
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.into()
}

impl ServiceConfig {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        Self {
            store_root: store_root.into(),
            bind: default_bind(),
            token_env: default_token_env(),
            providers: Vec::new(),
            mock_script: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("store unavailable: {0}")]
    Store(#[from] WorkspaceError),
    #[error("provider `{provider}`: {message}")]
    Provider { provider: String, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server stopped: {0}")]
    Server(std::io::Error),
}

type IdempotencyCache = Mutex<HashMap<(Method, String, String), (StatusCode, Option<HeaderValue>, Bytes)>>;

#[derive(Clone)]
pub struct AppState {
    pub(crate) workspace: Arc<Workspace>,
    /// Keyed by model name.
    pub(crate) gateways: Arc<BTreeMap<String, Arc<Gateway>>>,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) jobs: Arc<jobs::JobRegistry>,
    token: Option<Arc<str>>,
    idempotency: Arc<IdempotencyCache>,
}

impl AppState {
    pub fn new(workspace: Workspace, clock: Arc<dyn Clock>) -> Self {
        Self {
            workspace: Arc::new(workspace),
            gateways: Arc::new(BTreeMap::new()),
            clock,
            jobs: Arc::default(),
            token: None,
            idempotency: Arc::default(),
        }
    }

    /// Opens the store and builds one gateway per configured provider.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let workspace = Workspace::open(&config.store_root)?;
        let mut state = Self::new(workspace, Arc::new(SystemClock));
        for provider in &config.providers {
            let transport =
                transport_for(provider, config.mock_script.as_deref()).map_err(|message| ServiceError::Provider {
                    provider: provider.provider_id.clone(),
                    message,
                })?;
            state = state.with_gateway(Gateway::new(provider.clone(), transport));
        }
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(state.with_token(token))
    }

    pub fn with_gateway(mut self, gateway: Gateway) -> Self {
        Arc::make_mut(&mut self.gateways).insert(gateway.model_name().to_string(), Arc::new(gateway));
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.map(Into::into);
        self
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/papers", get(routes::papers))
        .route("/taxonomy", get(routes::taxonomy_all))
        .route("/taxonomy/{dim}", get(routes::taxonomy_get).put(routes::taxonomy_put))
        .route("/prompts/{dim}/constraints", post(routes::edit_constraints))
        .route("/gold/{dim}", get(routes::gold_get).post(routes::gold_post))
        .route("/jobs/classify", post(routes::submit_job))
        .route("/jobs/{id}", get(routes::get_job))
        .route("/jobs/{id}/cancel", post(routes::cancel_job))
        .route("/jobs/{id}/assignments", get(routes::job_assignments))
        .route("/evaluations/{dim}", get(routes::evaluations))
        .route("/network/centrality", get(routes::centrality))
        .route("/analytics/frequency/{dim}", get(routes::frequency))
        .route("/analytics/chord", get(routes::chord))
        .route("/analytics/evolution", get(routes::evolution))
        .layer(middleware::from_fn_with_state(state.clone(), idempotent))
        .layer(middleware::from_fn_with_state(state.clone(), authorize));
    Router::new()
        .route("/healthz", get(routes::healthz))
        .merge(api)
        .fallback(|| async { ApiError::not_found("no_route", "no such endpoint") })
        .with_state(state)
}

async fn authorize(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

/// Replays the first response of a mutating request for a repeated key.
async fn idempotent(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let key = request
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let (Some(key), true) = (key, matches!(method, Method::POST | Method::PUT)) else {
        return next.run(request).await;
    };
    let cache_key = (method, request.uri().path().to_owned(), key);
    if let Some((status, content_type, body)) = state.idempotency.lock().expect("cache").get(&cache_key).cloned() {
        return replay(status, content_type, body);
    }
    let response = next.run(request).await;
    let (parts, body) = response.into_parts();
    let bytes = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(e.to_string()).into_response(),
    };
    let content_type = parts.headers.get(header::CONTENT_TYPE).cloned();
    if !parts.status.is_server_error() {
        state
            .idempotency
            .lock()
            .expect("cache")
            .insert(cache_key, (parts.status, content_type, bytes.clone()));
    }
    Response::from_parts(parts, Body::from(bytes))
}

fn replay(status: StatusCode, content_type: Option<HeaderValue>, body: Bytes) -> Response {
    let mut response = (status, body).into_response();
    if let Some(ct) = content_type {
        response.headers_mut().insert(header::CONTENT_TYPE, ct);
    }
    response
}

/// A running server. Dropping the handle leaves the server running.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.shutdown.send(());
        join(self.task).await
    }

    /// Waits until the server stops on its own.
    pub async fn wait(self) -> Result<(), ServiceError> {
        let _keep_running = self.shutdown;
        join(self.task).await
    }
}

async fn join(task: JoinHandle<std::io::Result<()>>) -> Result<(), ServiceError> {
    match task.await {
        Ok(r) => r.map_err(ServiceError::Server),
        Err(e) => Err(ServiceError::Server(std::io::Error::other(e))),
    }
}

/// Opens the store, binds the listener and starts serving in the background.
pub async fn serve(config: &ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let state = AppState::from_config(config)?;
    serve_state(state, config.bind).await
}

pub async fn serve_state(state: AppState, bind: SocketAddr) -> Result<ServiceHandle, ServiceError> {
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|source| ServiceError::Bind { addr: bind, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| ServiceError::Bind { addr: bind, source })?;
    let (tx, rx) = oneshot::channel();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServiceHandle {
        addr,
        shutdown: tx,
        task,
    })
}
