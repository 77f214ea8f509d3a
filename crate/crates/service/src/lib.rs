//! HTTP API behind the studio: live synthesis previews, parameter presets,
//! refinement previews from a loaded checkpoint, and blinded real/fake
//! visual-test sessions.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/healthz` | liveness and corpus summary |
//! | POST | `/preview` | grid of freshly synthesized patches |
//! | GET | `/presets`, `/presets/{name}` | saved parameter sets |
//! | PUT | `/presets/{name}` | create or replace a preset |
//! | GET, POST | `/checkpoint` | show or swap the loaded refiner |
//! | POST | `/visual-test/sessions` | start a session |
//! | GET | `/visual-test/sessions/{id}/next` | current blind item |
//! | GET | `/visual-test/sessions/{id}/items/{item}/image` | PNG of an item |
//! | POST | `/visual-test/sessions/{id}/answers` | record one answer |
//! | GET | `/visual-test/sessions/{id}/report` | confusion matrix (`?format=csv\|table`) |
//!
//! No visual-test item response carries the item's true kind.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;

mod error;
mod routes;
mod state;

pub use error::{ApiError, ApiResult, ErrorBody};
pub use routes::{PreviewItem, PreviewRequest, PreviewResponse, SessionView, MAX_GRID};
pub use state::{
    AppState, GalleryPatch, LoadedModel, PatchSource, Preset, Reservation, ServiceOptions,
    WorkerPool,
};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(routes::healthz))
        .route("/preview", post(routes::preview))
        .route("/presets", get(routes::list_presets))
        .route(
            "/presets/{name}",
            get(routes::get_preset).put(routes::put_preset),
        )
        .route(
            "/checkpoint",
            get(routes::get_checkpoint).post(routes::load_checkpoint),
        )
        .route("/visual-test/sessions", post(routes::create_session))
        .route("/visual-test/sessions/{id}/next", get(routes::session_next))
        .route(
            "/visual-test/sessions/{id}/items/{item_id}/image",
            get(routes::session_image),
        )
        .route(
            "/visual-test/sessions/{id}/answers",
            post(routes::session_answer),
        )
        .route(
            "/visual-test/sessions/{id}/report",
            get(routes::session_report),
        )
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub options: ServiceOptions,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Setup(#[from] histosynth::Error),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Bind first (so a taken port fails before any loading), then load the
/// corpus and checkpoint and serve until the process is stopped.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.addr,
            source,
        })?;
    let state = tokio::task::spawn_blocking(move || -> histosynth::Result<AppState> {
        let st = AppState::from_corpus(config.corpus.as_deref(), config.options)?;
        if let Some(ckpt) = &config.checkpoint {
            st.load_checkpoint(ckpt)?;
        }
        Ok(st)
    })
    .await
    .map_err(|e| std::io::Error::other(e.to_string()))??;
    tracing::info!(addr = %listener.local_addr()?, styles = ?state.styles(), "serving");
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
