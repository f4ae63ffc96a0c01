use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;

use crate::error::ApiError;
use crate::state::{AppState, BridgeApiRequest, CompleteRequest, FeedbackRequest};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/complete", post(complete))
        .route("/v1/bridge", post(bridge))
        .route("/v1/feedback", post(feedback))
        .route("/v1/annotations", get(annotations))
        .route("/v1/health", get(health))
        .with_state(state)
}

async fn create_session(State(s): State<Arc<AppState>>) -> Result<impl IntoResponse, ApiError> {
    let id = s.create_session()?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn get_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.session(&id).await?))
}

async fn complete(State(s): State<Arc<AppState>>, Json(req): Json<CompleteRequest>) -> Result<impl IntoResponse, ApiError> {
    let candidates = s.complete(req).await?;
    Ok(Json(json!({ "candidates": candidates })))
}

async fn bridge(State(s): State<Arc<AppState>>, Json(req): Json<BridgeApiRequest>) -> Result<impl IntoResponse, ApiError> {
    let candidates = s.bridge(req).await?;
    Ok(Json(json!({ "candidates": candidates })))
}

async fn feedback(State(s): State<Arc<AppState>>, Json(req): Json<FeedbackRequest>) -> Result<impl IntoResponse, ApiError> {
    s.feedback(req).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct Since {
    since: Option<DateTime<Utc>>,
}

async fn annotations(State(s): State<Arc<AppState>>, Query(q): Query<Since>) -> Result<impl IntoResponse, ApiError> {
    let mut body = String::new();
    for a in s.annotations(q.since) {
        body.push_str(&serde_json::to_string(&a).map_err(ApiError::internal)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn health(State(s): State<Arc<AppState>>) -> impl IntoResponse {
    Json(s.health())
}
