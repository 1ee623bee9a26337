//! Read-only HTTP API over one loaded artifact.
//!
//! * `GET /v1/metadata` describes the artifact.
//! * `POST /v1/predict` takes `{"proportions": [...]}`.
//! * `POST /v1/optimize` takes `{"bounds"?, "grid_step"?, "refine_iters"?}`.
//!
//! Invalid bodies get a 4xx reply `{"error": {"category", "rule", "message"}}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;

use mixlaw::{Error, LawArtifact, LossSurface};

use crate::api::{self, OptimizeRequest, PredictRequest};

pub struct ApiError {
    status: StatusCode,
    category: String,
    rule: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, category: &str, rule: &str, message: impl Into<String>) -> Self {
        ApiError { status, category: category.into(), rule: rule.into(), message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let rule = match &e {
            Error::InvalidMixture { rule, .. } => rule.to_string(),
            Error::DimensionMismatch { .. } => "dimension".to_string(),
            other => other.category().to_string(),
        };
        let status = match &e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError { status, category: e.category().into(), rule, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"category": self.category, "rule": self.rule, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "parse", "schema", e.to_string()))
}

fn surface(artifact: &LawArtifact) -> Result<&(dyn LossSurface<f64> + Send), ApiError> {
    artifact.surface().ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unsupported",
            "mixture-surface",
            format!("a {} artifact does not map mixtures to losses", artifact.kind()),
        )
    })
}

async fn metadata(State(artifact): State<Arc<LawArtifact>>) -> Response {
    Json(artifact.metadata()).into_response()
}

async fn predict(State(artifact): State<Arc<LawArtifact>>, body: Bytes) -> Result<Response, ApiError> {
    let request: PredictRequest = parse_body(&body)?;
    let response = api::predict_at(surface(&artifact)?, &request.proportions, false)?;
    Ok(Json(response).into_response())
}

async fn optimize(State(artifact): State<Arc<LawArtifact>>, body: Bytes) -> Result<Response, ApiError> {
    let request: OptimizeRequest = if body.iter().all(u8::is_ascii_whitespace) { OptimizeRequest::default() } else { parse_body(&body)? };
    surface(&artifact)?;
    let worker = Arc::clone(&artifact);
    let result = tokio::task::spawn_blocking(move || {
        let surface = worker.surface().expect("checked above");
        api::optimize(surface, &request, false)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "worker", e.to_string()))?;
    Ok(Json(result?).into_response())
}

pub fn router(artifact: Arc<LawArtifact>) -> Router {
    Router::new()
        .route("/v1/metadata", get(metadata))
        .route("/v1/predict", post(predict))
        .route("/v1/optimize", post(optimize))
        .with_state(artifact)
}

pub async fn serve(artifact: LawArtifact, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} artifact on http://{}", artifact.kind(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(artifact))).await?;
    Ok(())
}
