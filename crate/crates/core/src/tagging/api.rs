//! HTTP JSON API over [`TaggingService`].
//!
//! | method | path | body / reply |
//! |---|---|---|
//! | GET | `/api/queue/{alias}` | next task, or 204 when the queue is empty |
//! | POST | `/api/decisions` | [`DecisionSubmission`] → [`DecisionAck`] |
//! | GET | `/api/ties?alias=...` | open tie-break tasks (tie-breaker only) |
//! | GET | `/api/progress` | alias → assigned/completed |
//! | POST | `/api/finalize` | optional `{"narrative_ids": [...]}` → [`FinalizeReport`] |
//! | GET | `/api/exclusion-codes` | the six criteria |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::service::{DecisionSubmission, TaggingService};
use super::ExclusionCode;
use crate::Error;

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Validation(_) | Error::InvalidArgument(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Forbidden(_) | Error::UnassignedReviewer { .. } => StatusCode::FORBIDDEN,
            Error::UnknownNarrative(_) => StatusCode::NOT_FOUND,
            Error::Finalized(_) | Error::MissingDecision { .. } | Error::MissingTieBreak(_) => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": {"kind": self.0.kind(), "message": self.0.to_string()}});
        (status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

type Shared = Arc<TaggingService>;

async fn queue(State(svc): State<Shared>, Path(alias): Path<String>) -> Result<Response, ApiError> {
    Ok(match svc.queue_next(&alias)? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn decisions(
    State(svc): State<Shared>,
    Json(body): Json<DecisionSubmission>,
) -> Result<Response, ApiError> {
    Ok(Json(svc.record_decision(body)?).into_response())
}

#[derive(Deserialize)]
struct AliasQuery {
    alias: String,
}

async fn ties(State(svc): State<Shared>, Query(q): Query<AliasQuery>) -> Result<Response, ApiError> {
    Ok(Json(svc.ties(&q.alias)?).into_response())
}

async fn progress(State(svc): State<Shared>) -> Response {
    Json(svc.progress()).into_response()
}

#[derive(Deserialize, Default)]
struct FinalizeBody {
    narrative_ids: Option<Vec<String>>,
}

async fn finalize(
    State(svc): State<Shared>,
    body: Option<Json<FinalizeBody>>,
) -> Result<Response, ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    Ok(Json(svc.finalize(body.narrative_ids.as_deref())?).into_response())
}

async fn exclusion_codes() -> Response {
    let codes: Vec<_> = ExclusionCode::ALL
        .iter()
        .map(|c| json!({"code": c, "description": c.description()}))
        .collect();
    Json(codes).into_response()
}

/// Routes for the review API, plus static files from `ui_dir` when given.
pub fn router(service: Arc<TaggingService>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue/{alias}", get(queue))
        .route("/api/decisions", post(decisions))
        .route("/api/ties", get(ties))
        .route("/api/progress", get(progress))
        .route("/api/finalize", post(finalize))
        .route("/api/exclusion-codes", get(exclusion_codes))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// A server running on its own thread; dropped handles shut it down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops (e.g. on Ctrl-C when started by the CLI).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn_server(
    service: Arc<TaggingService>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> crate::Result<ServerHandle> {
    let (ready_tx, ready_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(service, ui_dir);
    let thread = std::thread::spawn(move || {
        let rt = match tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                let _ = ready_tx.send(Err(e.to_string()));
                return;
            }
        };
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(addr).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return;
                }
            };
            let _ = ready_tx.send(listener.local_addr().map_err(|e| e.to_string()));
            let shutdown = async move {
                tokio::select! {
                    _ = stop_rx => {}
                    _ = tokio::signal::ctrl_c() => {}
                }
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                log::error!("tagging server stopped: {e}");
            }
        });
    });
    let addr = ready_rx
        .recv()
        .map_err(|_| Error::Http("server thread exited before binding".into()))?
        .map_err(Error::Http)?;
    log::info!("tagging API listening on http://{addr}");
    Ok(ServerHandle {
        addr,
        shutdown: Some(stop_tx),
        thread: Some(thread),
    })
}
