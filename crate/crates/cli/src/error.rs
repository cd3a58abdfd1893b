use std::path::PathBuf;

use thiserror::Error;

use slr_core::analytics::AnalyticsError;
use slr_core::citenet::CitenetError;
use slr_core::classifier::ClassifierError;
use slr_core::corpus::CorpusError;
use slr_core::evaluation::EvaluationError;
use slr_core::store::StoreError;
use slr_core::taxonomy::TaxonomyError;
use slr_core::workspace::WorkspaceError;
use slr_service::ServiceError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("no store given; pass --store, set SLR_STORE or add `store` to the config file")]
    NoStore,
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Taxonomy(TaxonomyError),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Classifier(ClassifierError),
    #[error("provider for model `{model}`: {message}")]
    Provider { model: String, message: String },
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Citenet(#[from] CitenetError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Process exit status; 2 is left to argument errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::NoStore => 3,
            CliError::Store(_) => 4,
            CliError::Corpus(_) | CliError::Taxonomy(_) | CliError::Input { .. } => 5,
            CliError::Classifier(_) | CliError::Provider { .. } => 6,
            CliError::Precondition(_) => 7,
            CliError::Evaluation(_) => 8,
            CliError::Citenet(_) | CliError::Analytics(_) => 9,
            CliError::Service(_) => 10,
            CliError::Io { .. } => 11,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Store(e)
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::Taxonomy(e)
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Prompt(t) => CliError::Taxonomy(t),
            ClassifierError::NoOkRuns => CliError::Precondition(e.to_string()),
            other => CliError::Classifier(other),
        }
    }
}

impl From<WorkspaceError> for CliError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Store(s) => s.into(),
            WorkspaceError::Taxonomy(t) => t.into(),
            WorkspaceError::Classifier(c) => c.into(),
            other @ (WorkspaceError::GateNotConsolidated { .. }
            | WorkspaceError::NoRunSet(_)
            | WorkspaceError::EmptyCorpus) => CliError::Precondition(other.to_string()),
        }
    }
}
