//! HTTP review service: ingests calls, runs the review pipeline, queues the
//! flagged fields for human reviewers and exports their answers as gold
//! labels.

pub mod api;
pub mod config;
pub mod error;
pub mod store;

use std::sync::Arc;

use autoreview_core::extraction::{RemoteExtractor, RemoteModel};
use autoreview_core::pipeline::{ModelBundle, ReviewEngine};
use autoreview_core::review::ReviewPolicy;
use autoreview_core::{Error, Result};

pub use config::{load_specs, Backend, ServiceConfig};
pub use error::ApiError;
pub use store::{Action, ItemFilter, ItemStatus, ReviewItem, Run, RunStatus, Store};

pub struct AppState {
    pub store: Store,
    pub engine: Arc<ReviewEngine>,
    pub bearer_token: Option<String>,
    pub page_size: usize,
}

impl AppState {
    /// Loads the model bundle and opens the store described by `cfg`.
    pub fn from_config(cfg: &ServiceConfig) -> Result<AppState> {
        let specs = cfg.specs()?;
        let bundle = ModelBundle::load(&cfg.model_dir, &specs)?;
        let mut engine = ReviewEngine::new(bundle, specs, ReviewPolicy::for_strategy(cfg.strategy));
        engine.correct = cfg.correct;
        if cfg.backend == Backend::Remote {
            let model = Arc::new(RemoteModel::from_config(cfg.remote.clone())?);
            engine.extractor = Arc::new(RemoteExtractor::new(model.clone()));
            engine.remote_verifier = Some(model);
        }
        let store = match &cfg.store_path {
            Some(p) => Store::open(p).map_err(|e| Error::Config(e.to_string()))?,
            None => Store::in_memory(),
        };
        Ok(AppState {
            store,
            engine: Arc::new(engine),
            bearer_token: cfg.bearer_token.clone(),
            page_size: cfg.page_size,
        })
    }
}

pub fn build_app(state: Arc<AppState>) -> axum::Router {
    api::router(state)
}

/// Serves until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let state = Arc::new(AppState::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(&cfg.listen)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {}: {e}", cfg.listen)))?;
    log::info!("listening on {}", cfg.listen);
    axum::serve(listener, build_app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Config(format!("server: {e}")))
}
