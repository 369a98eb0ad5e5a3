//! Network service and CLI plumbing around `divex-core`.
//!
//! [`Engine`] owns the immutable corpus and map catalog plus all
//! session-scoped state (search histories, collaboration rooms, task
//! judging, usage log). [`api::router`] exposes it over HTTP and WebSocket.

pub mod api;
mod cache;
mod config;
mod engine;

use std::net::SocketAddr;

use divex_core::collab::CollabError;
use divex_core::colorfeat::ColorError;
use divex_core::corpus::CorpusError;
use divex_core::search::SearchError;
use divex_core::som::SomError;
use divex_core::taskserver::TaskError;
use thiserror::Error;

pub use cache::{catalog_digest, load_or_build_catalog};
pub use config::ServiceConfig;
pub use engine::{
    Clock, CollabRoom, Engine, Health, ManualClock, MapSummary, SearchRequest, ShotEntry, SystemClock,
    UserSession,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Concepts(#[from] ColorError),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Collab(#[from] CollabError),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown map {0:?}")]
    UnknownMap(String),
    #[error("task {0:?} is not running")]
    TaskNotActive(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("cannot bind {addr}: {source}")]
    PortUnavailable {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Loads everything named in `config`, binds the listener and serves until
/// ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), GatewayError> {
    let bind = config.bind.clone();
    let engine = std::sync::Arc::new(Engine::start(config, std::sync::Arc::new(SystemClock))?);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|source| GatewayError::PortUnavailable {
            addr: bind.clone(),
            source,
        })?;
    let addr: SocketAddr = listener.local_addr()?;
    let h = engine.health();
    tracing::info!(%addr, keyframes = h.keyframes, maps = h.maps, "serving");
    axum::serve(listener, api::router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
