//! HTTP/JSON API over a harness run directory, versioned under `/v1`.
//!
//! - `GET  /v1/datasets`
//! - `GET  /v1/models`
//! - `POST /v1/models/{id}/explain`
//! - `POST /v1/models/{id}/intervene`
//!
//! Models are loaded once and never mutated; every request is answered from
//! its own body alone.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tower_http::cors::CorsLayer;

pub use api::{
    explain, intervene_on, ExplainRequest, ExplainResponse, InterveneRequest, InterveneResponse, Overrides, Preset, Truth, ZSummary,
};
pub use error::ApiError;
pub use state::{AppState, LoadedModel};

type Shared = Arc<AppState>;

/// Maps body rejections: a wrong content type stays 415, anything else is a 400.
fn body<T: DeserializeOwned>(b: Result<Json<T>, JsonRejection>) -> Result<T, Response> {
    match b {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::MissingJsonContentType(e)) => Err(e.into_response()),
        Err(e) => Err(ApiError::BadRequest(e.body_text()).into_response()),
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn datasets(State(s): State<Shared>) -> Response {
    Json(api::list_datasets(&s)).into_response()
}

async fn models(State(s): State<Shared>) -> Response {
    Json(api::list_models(&s)).into_response()
}

async fn explain_route(State(s): State<Shared>, Path(id): Path<String>, b: Result<Json<ExplainRequest>, JsonRejection>) -> Response {
    let req = match body(b) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match blocking(move || explain(&s, &id, &req)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn intervene_route(
    State(s): State<Shared>,
    Path(id): Path<String>,
    b: Result<Json<InterveneRequest>, JsonRejection>,
) -> Response {
    let req = match body(b) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match blocking(move || intervene_on(&s, &id, &req)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn not_found() -> Response {
    ApiError::NoRoute.into_response()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/datasets", get(datasets))
        .route("/v1/models", get(models))
        .route("/v1/models/{id}/explain", post(explain_route))
        .route("/v1/models/{id}/intervene", post(intervene_route))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
