use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use slr_core::analytics::AnalyticsError;
use slr_core::citenet::CitenetError;
use slr_core::classifier::ClassifierError;
use slr_core::evaluation::EvaluationError;
use slr_core::store::StoreError;
use slr_core::taxonomy::TaxonomyError;
use slr_core::workspace::WorkspaceError;

/// Error body: a stable machine code plus human text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound { .. } => Self::not_found("not_found", message),
            StoreError::Conflict { .. } => Self::conflict("version_conflict", message),
            StoreError::InvalidId(_) | StoreError::InvalidFilter(_) => Self::bad_request(message),
            StoreError::MissingRoot(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", message),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => Self::internal(message),
        }
    }
}

impl From<TaxonomyError> for ApiError {
    fn from(e: TaxonomyError) -> Self {
        let message = e.to_string();
        match e {
            TaxonomyError::UnknownDimension(_) => Self::not_found("unknown_dimension", message),
            TaxonomyError::TextMapped(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "text_mapped", message),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_taxonomy", message),
        }
    }
}

impl From<ClassifierError> for ApiError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Prompt(t) => t.into(),
            ClassifierError::NoOkRuns => Self::conflict("no_ok_runs", e.to_string()),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "classification", other.to_string()),
        }
    }
}

impl From<EvaluationError> for ApiError {
    fn from(e: EvaluationError) -> Self {
        let message = e.to_string();
        match e {
            EvaluationError::EmptyGold => Self::conflict("no_gold", message),
            EvaluationError::EmptyPredictions | EvaluationError::NoOkRuns => Self::conflict("no_predictions", message),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "evaluation", message),
        }
    }
}

impl From<CitenetError> for ApiError {
    fn from(e: CitenetError) -> Self {
        let message = e.to_string();
        match e {
            CitenetError::UnknownDimension(_) | CitenetError::UnknownLabel { .. } => {
                Self::not_found("unknown_label", message)
            }
            CitenetError::EmptyGraph => Self::conflict("empty_graph", message),
            CitenetError::ZeroK => Self::bad_request(message),
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "analytics", e.to_string())
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Store(e) => e.into(),
            WorkspaceError::Taxonomy(e) => e.into(),
            WorkspaceError::Classifier(e) => e.into(),
            WorkspaceError::GateNotConsolidated { .. } => Self::conflict("gate_not_consolidated", e.to_string()),
            WorkspaceError::NoRunSet(_) => Self::not_found("no_run_set", e.to_string()),
            WorkspaceError::EmptyCorpus => Self::conflict("empty_corpus", e.to_string()),
        }
    }
}
