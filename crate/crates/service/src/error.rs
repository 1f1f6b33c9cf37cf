use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown stack {0:?}")]
    UnknownStack(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{}{message}", field.as_ref().map(|f| format!("{f}: ")).unwrap_or_default())]
    Unprocessable {
        field: Option<String>,
        message: String,
    },
    #[error("stale version {expected}; current version is {current}")]
    Conflict { expected: u64, current: u64 },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownStack(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        let mut body = json!({ "error": self.to_string() });
        match &self {
            ServiceError::Unprocessable {
                field: Some(field), ..
            } => body["field"] = json!(field),
            ServiceError::Conflict { current, .. } => body["current_version"] = json!(current),
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}
