use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine;
use clickforge::io::decode_rgb_png;
use clickforge::service::{PredictionJson, SessionStore};
use clickforge::{Click, Error};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) | Error::Schema { .. } | Error::Range(_) | Error::Png { .. } | Error::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::Config(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    /// Base64-encoded PNG.
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct SetClicks {
    pub clicks: Vec<Click>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub prediction: PredictionJson,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub directory: String,
    pub files: Vec<String>,
}

/// Runs blocking core work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> clickforge::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::Io(std::io::Error::other(e.to_string()))))?
        .map_err(ApiError)
}

async fn create(State(store): State<Arc<SessionStore>>, Json(body): Json<CreateSession>) -> ApiResult<Created> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(body.image.trim())
        .map_err(|e| Error::Validation(format!("image is not valid base64: {e}")))?;
    let image = decode_rgb_png(&bytes)?;
    let session_id = store.create(image)?;
    Ok(Json(Created { session_id }))
}

async fn set_clicks(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(body): Json<SetClicks>,
) -> ApiResult<PredictionResponse> {
    let map = blocking(move || store.set_clicks(&id, body.clicks)).await?;
    Ok(Json(PredictionResponse { prediction: PredictionJson::from_map(&map) }))
}

async fn state(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<clickforge::service::SessionState> {
    Ok(Json(store.state(&id)?))
}

async fn export(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<ExportResponse> {
    let (dir, manifest) = blocking(move || store.export(&id)).await?;
    let mut files = vec!["manifest.json".to_string()];
    for e in manifest.scenes {
        files.push(e.image);
        files.push(e.annotation);
    }
    Ok(Json(ExportResponse { directory: dir.display().to_string(), files }))
}

async fn healthz(State(store): State<Arc<SessionStore>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "predictor": store.predictor().kind() }))
}

async fn index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>clickforge</title>\
         <p>clickforge annotation service. API: POST /sessions, PUT /sessions/{id}/clicks, \
         GET /sessions/{id}, POST /sessions/{id}/export, GET /healthz.</p>",
    )
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/clicks", put(set_clicks))
        .route("/sessions/{id}/export", post(export))
        .with_state(store)
}
