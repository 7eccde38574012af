use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use stylesearch_core::Error;

/// Rendered as `{"error":{"code":..,"message":..}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::UnknownItem(_) => Self::new(StatusCode::NOT_FOUND, "unknown_item", msg),
            Error::MethodUnavailable(_) => {
                Self::new(StatusCode::CONFLICT, "method_unavailable", msg)
            }
            Error::DimensionMismatch { .. } | Error::ZeroVector(_) | Error::NonFinite(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_features", msg)
            }
            Error::InvalidParameter(_) | Error::MissingModality(_) => Self::bad_request(msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}
