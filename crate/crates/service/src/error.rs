use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use phylogrid_core::workflow::WorkflowError;
use serde::{Deserialize, Serialize};

/// Error body of every failed request. `code` is part of the public
/// contract; `message` is for people.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: &str) -> Self {
        self.field = Some(field.to_string());
        self
    }

    pub fn unauthenticated(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", msg)
    }

    pub fn forbidden(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", msg)
    }

    pub fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", msg)
    }

    pub fn too_large(limit: usize) -> Self {
        Self::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("uploads are limited to {}", human_bytes(limit)),
        )
    }

    pub fn not_acceptable(offered: &[&str]) -> Self {
        Self::new(
            StatusCode::NOT_ACCEPTABLE,
            "not_acceptable",
            format!("this resource is available as {}", offered.join(", ")),
        )
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg)
    }
}

pub(crate) fn human_bytes(n: usize) -> String {
    const MB: usize = 1024 * 1024;
    if n % MB == 0 {
        format!("{} MB", n / MB)
    } else {
        format!("{n} bytes")
    }
}

/// Stable code and HTTP status of each workflow error.
pub fn workflow_code(e: &WorkflowError) -> (StatusCode, &'static str) {
    use WorkflowError::*;
    match e {
        NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
        InvalidTransition { .. } => (StatusCode::CONFLICT, "invalid_transition"),
        ExpiredProxy => (StatusCode::FORBIDDEN, "expired_proxy"),
        NoProxy => (StatusCode::FORBIDDEN, "no_proxy"),
        RenewOnUserProxy => (StatusCode::CONFLICT, "renew_on_user_proxy"),
        NotAligned => (StatusCode::CONFLICT, "not_aligned"),
        TaxaMismatch => (StatusCode::UNPROCESSABLE_ENTITY, "taxa_mismatch"),
        ContentMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "content_mismatch"),
        NotConfigured => (StatusCode::CONFLICT, "not_configured"),
        NoOutputs => (StatusCode::NOT_FOUND, "no_outputs"),
        Seq(_) => (StatusCode::UNPROCESSABLE_ENTITY, "sequence_format"),
        Align(_) => (StatusCode::BAD_REQUEST, "alignment"),
        Phylo(_) => (StatusCode::BAD_REQUEST, "model"),
        Mcmc(_) => (StatusCode::BAD_REQUEST, "mcmc"),
        Exec(_) => (StatusCode::SERVICE_UNAVAILABLE, "executor"),
        Storage { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        let (status, code) = workflow_code(&e);
        let field = match &e {
            WorkflowError::ContentMismatch(taxon) => Some(format!("alignment.{taxon}")),
            WorkflowError::Phylo(_) => Some("lset".to_string()),
            WorkflowError::Seq(s) => s.line().map(|l| format!("line {l}")),
            _ => None,
        };
        Self {
            field,
            ..Self::new(status, code, e.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(field) = &self.field {
            write!(f, " ({field})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ApiError {}
