//! HTTP backend for the aspect-mapping workbench.
//!
//! Routes:
//! - `GET /api/aspects`: keywords and top example segments per MIA
//! - `GET /api/mapping`: the draft mapping
//! - `PUT /api/mapping`: apply a full or partial list of edits
//! - `POST /api/validate`: dev-split metrics under the draft
//! - `POST /api/mapping/commit`: write mapping.json and return its hash
//!
//! Anything else is served from the static directory.

pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sscl_core::aspects::MappingEdit;
use sscl_core::workspace::Workspace;
use tower_http::services::ServeDir;

pub use session::{Session, SessionError};

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub workdir: PathBuf,
    /// Defaults to the workspace teacher checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<workdir>/static`.
    pub static_dir: Option<PathBuf>,
    pub addr: SocketAddr,
}

impl ServerConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        Self {
            workdir: workdir.into(),
            checkpoint: None,
            static_dir: None,
            addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("server i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Load the session for `config`. A missing default checkpoint yields an
/// empty session (every API call answers 409); an explicit one must exist.
pub fn open_session(config: &ServerConfig) -> Result<Session, SessionError> {
    let ws = Workspace::new(&config.workdir);
    match &config.checkpoint {
        Some(path) => Session::open(&ws, path),
        None if ws.teacher().exists() => Session::open(&ws, &ws.teacher()),
        None => {
            log::warn!("no teacher checkpoint at {}; serving without one", ws.teacher().display());
            Ok(Session::empty())
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::NoCheckpoint | SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Body of `PUT /api/mapping`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingUpdate {
    pub entries: Vec<MappingEdit>,
}

fn mapping_json(table: &sscl_core::aspects::MappingTable) -> ApiResult<serde_json::Value> {
    let text = table.to_json(None).map_err(SessionError::from)?;
    Ok(Json(serde_json::from_str(&text).map_err(|e| SessionError::Core(e.into()))?))
}

async fn get_aspects(State(s): State<Arc<Session>>) -> ApiResult<session::AspectsView> {
    Ok(Json(s.loaded()?.aspects().clone()))
}

async fn get_mapping(State(s): State<Arc<Session>>) -> ApiResult<serde_json::Value> {
    mapping_json(&s.loaded()?.draft())
}

async fn put_mapping(
    State(s): State<Arc<Session>>,
    body: Result<Json<MappingUpdate>, JsonRejection>,
) -> ApiResult<serde_json::Value> {
    let Json(update) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    mapping_json(&s.loaded()?.edit(&update.entries)?)
}

async fn post_validate(State(s): State<Arc<Session>>) -> ApiResult<session::ValidationReport> {
    Ok(Json(s.loaded()?.validate()?))
}

async fn post_commit(State(s): State<Arc<Session>>) -> ApiResult<session::CommitReceipt> {
    Ok(Json(s.loaded()?.commit()?))
}

pub fn router(session: Arc<Session>, static_dir: PathBuf) -> Router {
    Router::new()
        .route("/api/aspects", get(get_aspects))
        .route("/api/mapping", get(get_mapping).put(put_mapping))
        .route("/api/validate", post(post_validate))
        .route("/api/mapping/commit", post(post_commit))
        .fallback_service(ServeDir::new(static_dir))
        .with_state(session)
}

pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let session = Arc::new(open_session(&config)?);
    let static_dir = config.static_dir.clone().unwrap_or_else(|| Workspace::new(&config.workdir).static_dir());
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("mapping workbench listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Run [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: ServerConfig) -> Result<(), ServeError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve(config))
}
