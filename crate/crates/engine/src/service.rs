use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use astra_core::index::FlatIndex;
use astra_core::pose::{encode_png, rasterize, PoseMap, RasterStyle};
use astra_core::retrieval::{GateConfig, RetrievalError, Retriever, UserPrompt};

use crate::cli::{index_info, make_embedder, make_normalization, outcome_json};
use crate::config::EngineConfig;

/// Immutable state shared by all handlers.
pub struct AppState {
    pub index: FlatIndex,
    pub index_path: PathBuf,
    pub pose_store: PathBuf,
    pub retriever: Retriever,
    pub style: RasterStyle,
}

impl AppState {
    /// Must be called outside an async context: it builds blocking clients.
    pub fn load(cfg: &EngineConfig, passthrough: bool, fixture_embedder: bool) -> Result<Self> {
        let index = FlatIndex::load(&cfg.index_path)
            .with_context(|| format!("loading index {}", cfg.index_path.display()))?;
        if !cfg.pose_store_path.is_dir() {
            bail!(
                "pose store {} is not a directory",
                cfg.pose_store_path.display()
            );
        }
        Ok(Self {
            index,
            index_path: cfg.index_path.clone(),
            pose_store: cfg.pose_store_path.clone(),
            retriever: Retriever::new(
                make_normalization(cfg, passthrough)?,
                make_embedder(cfg, fixture_embedder)?,
                GateConfig::new(cfg.alpha_u)?,
            ),
            style: RasterStyle::default(),
        })
    }
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

async fn health(State(s): State<Shared>) -> Json<Value> {
    Json(json!({ "status": "ok", "index_entries": s.index.len() }))
}

async fn info(State(s): State<Shared>) -> Json<Value> {
    Json(index_info(&s.index, &s.index_path))
}

#[derive(Deserialize)]
struct RetrieveRequest {
    prompt: String,
}

async fn retrieve(State(s): State<Shared>, Json(req): Json<RetrieveRequest>) -> Response {
    let prompt = match UserPrompt::new(req.prompt) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    // Client calls block; keep them off the async workers.
    let joined = tokio::task::spawn_blocking(move || s.retriever.retrieve(&prompt, &s.index)).await;
    match joined {
        Ok(Ok(outcome)) => Json(outcome_json(&outcome)).into_response(),
        Ok(Err(e @ RetrievalError::Embedding(_))) => error(StatusCode::BAD_GATEWAY, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn pose_png(State(s): State<Shared>, Path(file): Path<String>) -> Response {
    let Some(id) = file
        .strip_suffix(".png")
        .and_then(|i| i.parse::<u64>().ok())
    else {
        return error(StatusCode::NOT_FOUND, format!("no pose {file}"));
    };
    let Some(meta) = s.index.get(id) else {
        return error(StatusCode::NOT_FOUND, format!("no index entry {id}"));
    };
    let path = s.pose_store.join(format!("{}.json", meta.pose_ref));
    let text = match tokio::fs::read_to_string(&path).await {
        Ok(t) => t,
        Err(e) => {
            return error(
                StatusCode::NOT_FOUND,
                format!("pose {} unavailable: {e}", meta.pose_ref),
            )
        }
    };
    let png = PoseMap::from_json(&text)
        .and_then(|m| rasterize(&m, &s.style))
        .and_then(|img| encode_png(&img));
    match png {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/index/info", get(info))
        .route("/retrieve", post(retrieve))
        .route("/pose/{file}", get(pose_png))
        .with_state(state)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    log::info!("shutting down");
}

pub fn serve(cfg: &EngineConfig, passthrough: bool, fixture_embedder: bool) -> Result<()> {
    let state = Arc::new(AppState::load(cfg, passthrough, fixture_embedder)?);
    let app = router(state.clone());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        log::info!(
            "serving {} entries on {}",
            state.index.len(),
            listener.local_addr()?
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .context("server error")
    })?;
    // The last state reference (and its blocking clients) drops here, outside
    // the runtime.
    drop(rt);
    drop(state);
    Ok(())
}
