//! HTTP service for the curation workflow: run orchestration, per-epoch
//! samples with memorization flags, ratings, feedback weights, metrics and a
//! spline-fit preview for the anchor editor.
//!
//! Run images are served as static files under `/runs/<id>/epoch_<e>/`.

pub mod error;
pub mod record;
pub mod service;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use colsig_core::feedback::Rating;
use serde::Deserialize;
use tower_http::services::ServeDir;

pub use error::{ApiError, ApiResult};
pub use record::{RunRecord, RunStatus};
pub use service::AppState;
use service::*;

type Shared = State<Arc<AppState>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<Json<T>> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map(Json)
}

async fn list_runs(State(s): Shared) -> ApiResult<Json<Vec<RunRecord>>> {
    blocking(move || Ok(s.list_runs())).await
}

async fn create_run(State(s): Shared, Json(req): Json<CreateRun>) -> ApiResult<Json<RunRecord>> {
    blocking(move || s.create_run(req)).await
}

async fn get_run(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    blocking(move || s.get_run(&id)).await
}

async fn start(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    blocking(move || s.start(&id)).await
}

async fn pause(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    blocking(move || s.pause(&id)).await
}

async fn stop(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<RunRecord>> {
    blocking(move || s.stop(&id)).await
}

async fn epochs(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<Vec<u64>>> {
    blocking(move || s.epochs(&id)).await
}

#[derive(Deserialize)]
struct SampleQuery {
    #[serde(default)]
    include_flagged: bool,
}

async fn samples(
    State(s): Shared,
    Path((id, epoch)): Path<(String, u64)>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Json<SampleList>> {
    blocking(move || s.list_samples(&id, epoch, q.include_flagged)).await
}

async fn ratings(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<Vec<Rating>>> {
    blocking(move || s.ratings(&id)).await
}

async fn submit_rating(State(s): Shared, Json(r): Json<Rating>) -> ApiResult<Json<RatingAck>> {
    blocking(move || s.submit_rating(r)).await
}

async fn get_feedback(State(s): Shared, Path(id): Path<String>) -> ApiResult<Json<FeedbackView>> {
    blocking(move || s.feedback(&id)).await
}

async fn put_feedback(
    State(s): Shared,
    Path(id): Path<String>,
    Json(req): Json<SetFeedback>,
) -> ApiResult<Json<FeedbackView>> {
    blocking(move || s.set_feedback(&id, req)).await
}

#[derive(Deserialize)]
struct MetricsQuery {
    #[serde(default)]
    from_step: u64,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    1000
}

async fn metrics(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<MetricsPage>> {
    blocking(move || s.metrics(&id, q.from_step, q.limit)).await
}

async fn fit(Json(req): Json<FitRequest>) -> ApiResult<Json<FitResponse>> {
    blocking(move || fit_preview(&req)).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let files = ServeDir::new(state.root());
    Router::new()
        .route("/api/runs", get(list_runs).post(create_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/start", post(start))
        .route("/api/runs/{id}/pause", post(pause))
        .route("/api/runs/{id}/stop", post(stop))
        .route("/api/runs/{id}/epochs", get(epochs))
        .route("/api/runs/{id}/epochs/{epoch}/samples", get(samples))
        .route("/api/runs/{id}/ratings", get(ratings))
        .route("/api/runs/{id}/feedback", get(get_feedback).put(put_feedback))
        .route("/api/runs/{id}/metrics", get(metrics))
        .route("/api/ratings", post(submit_rating))
        .route("/api/fit", post(fit))
        .nest_service("/runs", files)
        .with_state(state)
}

/// Serve `root` on `addr` until the process ends.
pub async fn serve(root: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(root).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
