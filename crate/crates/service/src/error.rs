use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use histosynth::{Error, FieldError};
use serde::Serialize;

/// JSON error body: `{"error": "...", "fields": [...]}`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: msg.into(),
                fields: Vec::new(),
            },
        }
    }

    pub fn fields(fields: Vec<FieldError>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: "invalid request".into(),
                fields,
            },
        }
    }

    pub fn field(field: &str, msg: impl Into<String>) -> Self {
        Self::fields(vec![FieldError::new(field, msg)])
    }

    pub fn not_found(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, msg)
    }

    pub fn conflict(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, msg)
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, msg)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Params(fields) => Self::fields(fields),
            Error::UnknownItem(_) => Self::not_found(e.to_string()),
            Error::AlreadyAnswered(_) => Self::conflict(e.to_string()),
            Error::Invalid(_)
            | Error::Shape(_)
            | Error::GroupTooSmall(_)
            | Error::Session(_)
            | Error::Config(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
            Error::Checkpoint(_) | Error::CheckpointVersion { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            other => {
                tracing::error!(error = %other, "request failed");
                Self::internal(other.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

/// Parse a JSON body ourselves so malformed fields come back as 422 with a message.
pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let bytes = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        bytes
    };
    serde_json::from_slice(bytes).map_err(|e| {
        if e.is_data() {
            ApiError::field("body", e.to_string())
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}"))
        }
    })
}
