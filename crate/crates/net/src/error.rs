use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gpunion_core::coordinator::CoordError;
use serde::{Deserialize, Serialize};

/// Wire form of every API error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: code.to_string(), message: message.into() } }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "ShuttingDown", "coordinator loop has stopped")
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "Unauthorized" => StatusCode::UNAUTHORIZED,
        "UnknownNode" | "NotFound" => StatusCode::NOT_FOUND,
        "StaleSequence" | "DuplicateActiveNode" | "NodeDeparted" | "IllegalTransition" => StatusCode::CONFLICT,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<CoordError> for ApiError {
    fn from(e: CoordError) -> Self {
        let code = e.code();
        Self::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
