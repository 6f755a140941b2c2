//! Session-oriented HTTP API for interactive segmentation.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/api/sessions` | JSON `{image_b64, gt_b64?, cfr?}` or multipart `image`, `gt`, `cfr` |
//! | POST | `/api/sessions/{id}/clicks` | `{u, v, label}` with label 1 positive, 0 negative |
//! | POST | `/api/sessions/{id}/refine` | `{mode, n, threshold?}` or `"fixed:2"` |
//! | POST | `/api/sessions/{id}/undo` | none |
//! | GET | `/api/sessions/{id}` | none |
//! | DELETE | `/api/sessions/{id}` | none |
//!
//! Mask-returning endpoints accept `?full=1` to include the raw probability
//! map (CSPM, base64). Requests to one session run one at a time.

pub mod api;
pub mod error;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use clickseg_core::{CfrConfig, SegmenterFactory, DEFAULT_DISK_RADIUS};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub use error::ApiError;
pub use store::{SessionEntry, SessionStore};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_DIMENSION: usize = 2048;
pub const DEFAULT_IDLE_TTL: Duration = Duration::from_secs(30 * 60);

/// What a request does when its session is already busy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BusyPolicy {
    #[default]
    Wait,
    /// Answer 409 immediately.
    Reject,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_dimension: usize,
    pub idle_ttl: Duration,
    pub default_cfr: CfrConfig,
    pub radius: usize,
    pub busy: BusyPolicy,
    /// Upload cap in bytes.
    pub max_body_bytes: usize,
    /// Directory of UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_dimension: DEFAULT_MAX_DIMENSION,
            idle_ttl: DEFAULT_IDLE_TTL,
            default_cfr: CfrConfig::STANDARD,
            radius: DEFAULT_DISK_RADIUS,
            busy: BusyPolicy::Wait,
            max_body_bytes: 64 << 20,
            static_dir: None,
        }
    }
}

pub type SharedFactory = Arc<dyn SegmenterFactory + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub store: Arc<SessionStore>,
    /// Each session gets its own segmenter from this factory.
    pub factory: SharedFactory,
}

impl AppState {
    pub fn new(config: ServiceConfig, factory: SharedFactory) -> Self {
        Self {
            store: Arc::new(SessionStore::new(config.idle_ttl)),
            config: Arc::new(config),
            factory,
        }
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(api::create_session))
        .route("/api/sessions/{id}", get(api::get_state).delete(api::delete_session))
        .route("/api/sessions/{id}/clicks", post(api::add_click))
        .route("/api/sessions/{id}/refine", post(api::refine))
        .route("/api/sessions/{id}/undo", post(api::undo))
        .layer(DefaultBodyLimit::max(state.config.max_body_bytes))
        .layer(TraceLayer::new_for_http());
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

/// Serves until the listener fails, sweeping idle sessions once a minute.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let store = state.store.clone();
    let period = state.config.idle_ttl.min(Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let dropped = store.sweep();
            if dropped > 0 {
                tracing::info!(dropped, "expired idle sessions");
            }
        }
    });
    tracing::info!(addr = ?listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
