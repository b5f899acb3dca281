use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

use intervene_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("no such route")]
    NoRoute,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: u16,
    error: &'a str,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownModel(_) | ApiError::NoRoute => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NonFinite(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFiniteObjective { .. } | CoreError::NonFinite(_) => ApiError::NonFinite(e.to_string()),
            CoreError::Shape { .. } | CoreError::InvalidArgument(_) | CoreError::Config(_) | CoreError::Empty(_) => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let msg = self.to_string();
        (
            status,
            Json(ErrorBody {
                status: status.as_u16(),
                error: &msg,
            }),
        )
            .into_response()
    }
}
