//! JSON-over-HTTP front end.
//!
//! - `POST /v1/posts`: body is a post; replies once it is searchable.
//! - `GET /v1/search?q=..&searcher=..&page_size=..&alpha=..&mode=..`
//!   where mode is `hybrid` (default), `tbr_only` or `ebr_only`
//! - `GET /v1/health`
//! - `GET /v1/stats`

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Query as QueryParams, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::{Engine, RetrievalMode, SearchOptions};
use crate::corpus::{MemberId, Post, Query};
use crate::error::{Error, Result};

type Shared = Arc<Engine>;

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Invalid { .. }
            | Error::DuplicatePost(_)
            | Error::DimensionMismatch { .. }
            | Error::Lines(_) => StatusCode::BAD_REQUEST,
            Error::PostNotFound(_) => StatusCode::NOT_FOUND,
            Error::Uninitialized(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

async fn blocking<T, F>(f: F) -> std::result::Result<T, ApiError>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Config(format!("worker task failed: {e}")))),
    }
}

async fn ingest(State(engine): State<Shared>, Json(post): Json<Post>) -> std::result::Result<Response, ApiError> {
    post.validate()?;
    let ack = blocking(move || engine.publish(post)).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: String,
    #[serde(default)]
    searcher: u64,
    page_size: Option<usize>,
    alpha: Option<f64>,
    #[serde(default)]
    job_title: bool,
    #[serde(default)]
    mode: RetrievalMode,
}

async fn search(State(engine): State<Shared>, QueryParams(p): QueryParams<SearchParams>) -> std::result::Result<Response, ApiError> {
    let mut query = Query::new(p.q, MemberId(p.searcher));
    query.contains_job_title = p.job_title;
    let options = SearchOptions {
        alpha: p.alpha,
        page_size: p.page_size,
        mode: p.mode,
    };
    let response = blocking(move || engine.search_with(&query, &options)).await?;
    Ok(Json(response).into_response())
}

async fn health(State(engine): State<Shared>) -> Json<serde_json::Value> {
    let s = engine.stats();
    Json(json!({
        "status": "ok",
        "trained": s.trained,
        "posts": s.posts,
        "tbr_documents": s.tbr_documents,
        "ebr_vectors": s.ebr_vectors,
    }))
}

async fn stats(State(engine): State<Shared>) -> Json<super::EngineStats> {
    Json(engine.stats())
}

pub fn router(engine: Shared) -> Router {
    Router::new()
        .route("/v1/posts", post(ingest))
        .route("/v1/search", get(search))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .with_state(engine)
}

/// What stops a running service besides [`ServiceHandle::shutdown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShutdownSignal {
    HandleOnly,
    CtrlC,
}

/// A service running on its own thread and runtime.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServiceHandle {
    /// Binds `addr` (port 0 picks a free port) and starts serving. Bind
    /// failures are reported here, before the call returns.
    pub fn spawn(engine: Shared, addr: &str, signal: ShutdownSignal) -> Result<Self> {
        if !engine.is_trained() {
            return Err(Error::Uninitialized("no trained models; run training first"));
        }
        let listener = std::net::TcpListener::bind(addr).map_err(|e| Error::io(addr, e))?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("http".into())
            .spawn(move || -> Result<()> {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener)?;
                    let shutdown = async move {
                        match signal {
                            ShutdownSignal::HandleOnly => {
                                let _ = stopped.await;
                            }
                            ShutdownSignal::CtrlC => {
                                tokio::select! {
                                    _ = stopped => {}
                                    _ = tokio::signal::ctrl_c() => tracing::info!("interrupt received, shutting down"),
                                }
                            }
                        }
                    };
                    axum::serve(listener, router(engine)).with_graceful_shutdown(shutdown).await?;
                    Ok(())
                })
            })?;
        tracing::info!(%local, "service listening");
        Ok(ServiceHandle {
            addr: local,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the service stops on its own (for example on Ctrl-C).
    pub fn wait(mut self) -> Result<()> {
        self.join()
    }

    /// Stops accepting connections, drains in-flight requests and joins.
    pub fn shutdown(mut self) -> Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.join()
    }

    fn join(&mut self) -> Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(Error::Config("service thread panicked".into()))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.join();
    }
}
