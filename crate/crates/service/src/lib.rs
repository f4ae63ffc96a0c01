//! HTTP auto-complete service: sessions, completions, bridging, feedback
//! capture and annotation export over loaded claimforge models.

pub mod config;
pub mod error;
pub mod models;
pub mod routes;
pub mod session;
pub mod state;
pub mod store;

use std::sync::Arc;
use std::time::Duration;

pub use config::{ConfigError, ServiceConfig};
pub use error::ApiError;
pub use models::{CheckpointStatus, LoadedModels};
pub use routes::router;
pub use session::{Annotation, FeedbackAction, FeedbackEvent, HistoryItem, Session, StoredCandidate};
pub use state::{AppState, BridgeApiRequest, CompleteRequest, FeedbackRequest, Health};

/// Loads models, restores the journal and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let models = LoadedModels::load(&config);
    let bind = config.bind;
    let sweep = Duration::from_secs(config.session_ttl_secs.clamp(1, 60));
    let state = Arc::new(AppState::new(config, models)?);
    let health = state.health();
    tracing::info!(%bind, status = health.status, "serving");

    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep);
        loop {
            tick.tick().await;
            if let Err(e) = sweeper.expire_idle(chrono::Utc::now()) {
                tracing::warn!(error = %e.message, "session sweep failed");
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
