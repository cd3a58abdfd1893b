//! Where each artifact lives in a [`Store`], and the multi-step operations the
//! CLI and the HTTP service share.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use thiserror::Error;

use crate::citenet::{resolve_references, CitationGraph};
use crate::classifier::{
    consolidate, gate_positive, run_dimension, ClassifierError, FinalLabels, GateResult, LabelAssignment, RunOptions, RunSet,
};
use crate::corpus::{Corpus, PaperRecord};
use crate::evaluation::GoldSet;
use crate::llm::Gateway;
use crate::store::{ArtifactKind, Expect, Store, StoreError};
use crate::taxonomy::{TaxonomyError, TaxonomyRegistry};
use crate::Clock;

/// Id of the single corpus, taxonomy and graph artifact.
pub const MAIN_ID: &str = "main";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("dimension `{dimension}` needs final labels for gate `{gate}`; classify and consolidate it first")]
    GateNotConsolidated { dimension: String, gate: String },
    #[error("no run set for dimension `{0}`")]
    NoRunSet(String),
    #[error("corpus is empty; ingest an export first")]
    EmptyCorpus,
}

pub type Result<T> = std::result::Result<T, WorkspaceError>;

#[derive(Debug)]
pub struct Workspace {
    store: Store,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Ok(Self {
            store: Store::open(root)?,
        })
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        Ok(Self {
            store: Store::create(root)?,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Ok(self.store.get_latest(ArtifactKind::Corpus, MAIN_ID)?.unwrap_or_default())
    }

    pub fn save_corpus(&self, corpus: &Corpus, clock: &dyn Clock) -> Result<()> {
        self.store.put(ArtifactKind::Corpus, MAIN_ID, corpus, Expect::Any, clock)?;
        Ok(())
    }

    /// The stored taxonomy, or the built-in one before the first edit.
    pub fn registry(&self) -> Result<TaxonomyRegistry> {
        Ok(self
            .store
            .get_latest(ArtifactKind::Taxonomy, MAIN_ID)?
            .unwrap_or_else(TaxonomyRegistry::builtin))
    }

    pub fn save_registry(&self, registry: &TaxonomyRegistry, clock: &dyn Clock) -> Result<()> {
        self.store.put(ArtifactKind::Taxonomy, MAIN_ID, registry, Expect::Any, clock)?;
        Ok(())
    }

    pub fn run_set(&self, identity: &str) -> Result<Option<RunSet>> {
        Ok(self.store.get_latest(ArtifactKind::RunSet, identity)?)
    }

    /// Every stored run set of a dimension, ordered by identity.
    pub fn run_sets(&self, dimension_id: &str) -> Result<Vec<RunSet>> {
        let prefix = format!("{dimension_id}__");
        let mut out = Vec::new();
        for id in self.store.list(ArtifactKind::RunSet)? {
            if id.starts_with(&prefix) {
                if let Some(r) = self.run_set(&id)? {
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    /// The most recently written run set of a dimension, optionally for one model.
    pub fn latest_run_set(&self, dimension_id: &str, model: Option<&str>) -> Result<RunSet> {
        let prefix = format!("{dimension_id}__");
        let newest = self
            .store
            .journal()?
            .into_iter()
            .rev()
            .filter(|e| e.kind == ArtifactKind::RunSet && e.id.starts_with(&prefix))
            .map(|e| e.id)
            .find_map(|id| match self.run_set(&id) {
                Ok(Some(r)) if model.is_none_or(|m| r.model_name == m) => Some(Ok(r)),
                Ok(_) => None,
                Err(e) => Some(Err(e)),
            });
        newest.unwrap_or_else(|| Err(WorkspaceError::NoRunSet(dimension_id.into())))
    }

    pub fn save_run_set(&self, run_set: &RunSet, clock: &dyn Clock) -> Result<()> {
        self.store
            .put(ArtifactKind::RunSet, &run_set.identity(), run_set, Expect::Any, clock)?;
        Ok(())
    }

    pub fn gold(&self, dimension_id: &str) -> Result<GoldSet> {
        Ok(self
            .store
            .get_latest(ArtifactKind::GoldSet, dimension_id)?
            .unwrap_or_else(|| GoldSet::new(dimension_id)))
    }

    pub fn save_gold(&self, gold: &GoldSet, clock: &dyn Clock) -> Result<()> {
        self.store
            .put(ArtifactKind::GoldSet, &gold.dimension_id, gold, Expect::Any, clock)?;
        Ok(())
    }

    pub fn finals(&self, dimension_id: &str) -> Result<Option<FinalLabels>> {
        Ok(self.store.get_latest(ArtifactKind::Finals, dimension_id)?)
    }

    pub fn save_finals(&self, finals: &FinalLabels, clock: &dyn Clock) -> Result<()> {
        self.store
            .put(ArtifactKind::Finals, &finals.dimension_id, finals, Expect::Any, clock)?;
        Ok(())
    }

    /// Citation graph of the stored corpus with every stored final attached.
    pub fn graph(&self) -> Result<CitationGraph> {
        let corpus = self.corpus()?;
        let registry = self.registry()?;
        let mut graph = resolve_references(corpus.papers());
        for (dim_id, finals) in self.store.all_finals()? {
            if let Ok(dim) = registry.get(&dim_id) {
                graph.attach_labels(dim, &finals);
            }
        }
        Ok(graph)
    }

    /// Gate outcome over the corpus for a dimension that depends on one.
    pub fn gate_for(&self, registry: &TaxonomyRegistry, dimension_id: &str) -> Result<Option<GateResult>> {
        let dim = registry.get(dimension_id)?;
        let Some(gate) = &dim.depends_on else { return Ok(None) };
        let finals = self.finals(gate)?.ok_or_else(|| WorkspaceError::GateNotConsolidated {
            dimension: dimension_id.into(),
            gate: gate.clone(),
        })?;
        let corpus = self.corpus()?;
        let ids: Vec<_> = corpus.papers().map(|p| p.paper_id.clone()).collect();
        Ok(Some(gate_positive(&ids, &finals, registry.get(gate)?)))
    }

    /// Runs (or resumes) a dimension over the corpus, restricted to the gate
    /// when the dimension has one, and stores the run set.
    pub fn classify(&self, request: &ClassifyRequest<'_>) -> Result<RunSet> {
        let registry = self.registry()?;
        let dim = registry.get(request.dimension_id)?;
        let corpus = self.corpus()?;
        if corpus.is_empty() {
            return Err(WorkspaceError::EmptyCorpus);
        }
        let gate = self.gate_for(&registry, request.dimension_id)?;
        let papers: Vec<&PaperRecord> = corpus
            .papers()
            .filter(|p| gate.as_ref().is_none_or(|g| g.positive.contains(&p.paper_id)))
            .collect();
        let mut options = RunOptions::new(request.repetitions, request.clock);
        options.gate = gate.as_ref().map(|g| &g.positive);
        options.cancel = request.cancel;
        options.on_assignment = request.on_assignment;
        let identity = request.identity(&registry)?;
        let resume = self.run_set(&identity)?;
        let runs = run_dimension(&papers, dim, request.gateway, &options, resume)?;
        self.save_run_set(&runs, request.clock)?;
        Ok(runs)
    }

    /// Consolidates the newest run set of a dimension and stores the finals.
    pub fn consolidate(&self, dimension_id: &str, model: Option<&str>, clock: &dyn Clock) -> Result<FinalLabels> {
        let registry = self.registry()?;
        let runs = self.latest_run_set(dimension_id, model)?;
        let finals = consolidate(&runs, registry.get(dimension_id)?)?;
        self.save_finals(&finals, clock)?;
        Ok(finals)
    }
}

pub struct ClassifyRequest<'a> {
    pub dimension_id: &'a str,
    pub gateway: &'a Gateway,
    pub repetitions: u32,
    pub clock: &'a dyn Clock,
    pub cancel: Option<&'a AtomicBool>,
    pub on_assignment: Option<&'a (dyn Fn(&LabelAssignment) + Sync)>,
}

impl ClassifyRequest<'_> {
    /// Run-set identity this request writes to.
    pub fn identity(&self, registry: &TaxonomyRegistry) -> Result<String> {
        let dim = registry.get(self.dimension_id)?;
        Ok(crate::classifier::expected_identity(dim, self.gateway.model_name(), self.repetitions))
    }
}
