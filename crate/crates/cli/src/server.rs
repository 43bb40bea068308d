//! HTTP retrieval service: `POST /v1/retrieve`, `GET /v1/snapshot`.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mfli::embedding::EmbeddingStore;
use mfli::serving::{retrieve, RetrievalRequest, SelectionConfig};
use mfli::snapshot::SnapshotStore;
use mfli::{Error, Exec};
use serde::{Deserialize, Serialize};

use crate::{load_checkpoint, load_pair, CHECKPOINT_FILE, DELTA_FILE, FULL_FILE};

type Stamp = [Option<SystemTime>; 3];

fn stamp(dir: &Path) -> Stamp {
    [CHECKPOINT_FILE, FULL_FILE, DELTA_FILE].map(|f| std::fs::metadata(dir.join(f)).and_then(|m| m.modified()).ok())
}

#[derive(Debug)]
struct Loaded {
    stamp: Stamp,
    full_at: Instant,
    delta_at: Option<Instant>,
}

pub struct AppState {
    pub snapshots: SnapshotStore,
    embeddings: RwLock<Arc<EmbeddingStore>>,
    pub selection: SelectionConfig,
    pub exec: Exec,
    loaded: Mutex<Loaded>,
}

impl AppState {
    pub fn load(dir: &Path, selection: SelectionConfig, exec: Exec) -> anyhow::Result<Arc<Self>> {
        let stamp = stamp(dir);
        let store = load_checkpoint(dir)?.embedding_store()?;
        let pair = load_pair(dir)?;
        selection.validate(pair.full.facets())?;
        let now = Instant::now();
        let delta_at = pair.delta.as_ref().map(|_| now);
        Ok(Arc::new(Self {
            snapshots: SnapshotStore::new(pair),
            embeddings: RwLock::new(Arc::new(store)),
            selection,
            exec,
            loaded: Mutex::new(Loaded { stamp, full_at: now, delta_at }),
        }))
    }

    pub fn embeddings(&self) -> Arc<EmbeddingStore> {
        self.embeddings.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Reloads checkpoint and snapshots if any file changed since the last
    /// load. Returns whether a swap happened.
    pub fn reload_if_changed(&self, dir: &Path) -> anyhow::Result<bool> {
        let now_stamp = stamp(dir);
        let mut loaded = self.loaded.lock().unwrap_or_else(|e| e.into_inner());
        if now_stamp == loaded.stamp {
            return Ok(false);
        }
        if now_stamp[0] != loaded.stamp[0] {
            let store = load_checkpoint(dir)?.embedding_store()?;
            *self.embeddings.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(store);
        }
        let pair = load_pair(dir)?;
        let before = self.snapshots.current();
        let now = Instant::now();
        if before.full.snapshot_id != pair.full.snapshot_id || now_stamp[1] != loaded.stamp[1] {
            loaded.full_at = now;
        }
        loaded.delta_at = match (&pair.delta, &before.delta) {
            (None, _) => None,
            (Some(d), Some(b)) if d.snapshot_id == b.snapshot_id && now_stamp[2] == loaded.stamp[2] => loaded.delta_at,
            (Some(_), _) => Some(now),
        };
        self.snapshots.swap(pair);
        loaded.stamp = now_stamp;
        Ok(true)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RetrieveBody {
    pub triggers: Vec<u64>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub full_id: u64,
    pub full_created_at: u64,
    pub full_age_secs: f64,
    pub full_items: usize,
    pub delta_id: Option<u64>,
    pub delta_created_at: Option<u64>,
    pub delta_age_secs: Option<f64>,
    pub delta_items: usize,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptyTriggers { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Argument(_) | Error::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

async fn retrieve_handler(State(state): State<Arc<AppState>>, Json(body): Json<RetrieveBody>) -> Result<Response, ApiError> {
    let mut cfg = state.selection.clone();
    if let Some(k) = body.k {
        cfg.k = k;
        cfg.k_per_facet = None;
    }
    if let Some(n) = body.n {
        cfg.n = n;
    }
    if let Some(t) = body.tau {
        cfg.tau = t;
    }
    if let Some(a) = body.alpha {
        cfg.alpha = a;
    }
    let req = RetrievalRequest { triggers: body.triggers, seed: body.seed.unwrap_or(0) };
    let st = state.clone();
    let resp = tokio::task::spawn_blocking(move || {
        let pair = st.snapshots.current();
        retrieve(&req, &cfg, &pair, &st.embeddings(), st.exec)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp).into_response())
}

async fn snapshot_handler(State(state): State<Arc<AppState>>) -> Json<SnapshotInfo> {
    let pair = state.snapshots.current();
    let loaded = state.loaded.lock().unwrap_or_else(|e| e.into_inner());
    Json(SnapshotInfo {
        full_id: pair.full.snapshot_id,
        full_created_at: pair.full.created_at,
        full_age_secs: loaded.full_at.elapsed().as_secs_f64(),
        full_items: pair.full.num_items(),
        delta_id: pair.delta.as_ref().map(|d| d.snapshot_id),
        delta_created_at: pair.delta.as_ref().map(|d| d.created_at),
        delta_age_secs: loaded.delta_at.map(|t| t.elapsed().as_secs_f64()),
        delta_items: pair.delta.as_ref().map_or(0, |d| d.len()),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/retrieve", post(retrieve_handler))
        .route("/v1/snapshot", get(snapshot_handler))
        .with_state(state)
}

/// Serves until Ctrl-C, polling `dir` for new snapshots every `reload`.
pub async fn serve(state: Arc<AppState>, dir: PathBuf, port: u16, reload: Duration) -> anyhow::Result<()> {
    let watcher = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(reload);
            loop {
                tick.tick().await;
                let (st, d) = (state.clone(), dir.clone());
                match tokio::task::spawn_blocking(move || st.reload_if_changed(&d)).await {
                    Ok(Ok(true)) => tracing::info!(full = state.snapshots.current().full.snapshot_id, "snapshots reloaded"),
                    Ok(Ok(false)) => {}
                    Ok(Err(e)) => tracing::warn!(error = %e, "snapshot reload failed; keeping current"),
                    Err(e) => tracing::warn!(error = %e, "reload task failed"),
                }
            }
        })
    };
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    watcher.abort();
    Ok(())
}
