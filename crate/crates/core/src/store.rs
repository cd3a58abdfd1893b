//! Versioned artifact store and filtered paper queries.
//!
//! Layout under the root directory:
//!
//! ```text
//! <kind>/<id>/v000001.json   one file per committed version
//! journal.jsonl              append-only record of every commit
//! ```
//!
//! A version file is written to a temporary name and then linked into place,
//! so readers never observe a partial artifact and two writers racing for the
//! same version cannot both succeed.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::FinalLabels;
use crate::corpus::{Corpus, PaperRecord};
use crate::taxonomy::label_matches;
use crate::{Clock, LabelSet, PaperId};

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{kind} `{id}`{} not found", .version.map(|v| format!(" version {v}")).unwrap_or_default())]
    NotFound { kind: ArtifactKind, id: String, version: Option<u64> },
    #[error("version conflict on {kind} `{id}`: expected {expected}, found {found}")]
    Conflict { kind: ArtifactKind, id: String, expected: u64, found: u64 },
    #[error("invalid artifact id `{0}`")]
    InvalidId(String),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Corpus,
    Taxonomy,
    RunSet,
    GoldSet,
    Finals,
    Graph,
    Report,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 7] = [
        ArtifactKind::Corpus,
        ArtifactKind::Taxonomy,
        ArtifactKind::RunSet,
        ArtifactKind::GoldSet,
        ArtifactKind::Finals,
        ArtifactKind::Graph,
        ArtifactKind::Report,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            ArtifactKind::Corpus => "corpus",
            ArtifactKind::Taxonomy => "taxonomy",
            ArtifactKind::RunSet => "run_set",
            ArtifactKind::GoldSet => "gold_set",
            ArtifactKind::Finals => "finals",
            ArtifactKind::Graph => "graph",
            ArtifactKind::Report => "report",
        }
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: ArtifactKind,
    pub id: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub committed_at: DateTime<Utc>,
    pub kind: ArtifactKind,
    pub id: String,
    pub version: u64,
    pub sha256: String,
}

/// Shared by every artifact kind: an optimistic-concurrency check on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    /// Write the next version whatever the current one is.
    Any,
    /// Fail unless the latest version equals this (0 means absent).
    Version(u64),
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    tmp_seq: AtomicU64,
}

pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.into()))
    }
}

fn version_file(version: u64) -> String {
    format!("v{version:06}.json")
}

fn parse_version(name: &str) -> Option<u64> {
    name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
}

impl Store {
    /// Opens an existing store directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::MissingRoot(root));
        }
        Ok(Self {
            root,
            tmp_seq: AtomicU64::new(0),
        })
    }

    /// Creates the directory if needed, then opens it.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Checks that the root is still a writable directory.
    pub fn health(&self) -> Result<(), StoreError> {
        if !self.root.is_dir() {
            return Err(StoreError::MissingRoot(self.root.clone()));
        }
        let probe = self.root.join(format!(".health-{}", std::process::id()));
        fs::write(&probe, b"ok").map_err(io_err(&probe))?;
        fs::remove_file(&probe).map_err(io_err(&probe))
    }

    fn artifact_dir(&self, kind: ArtifactKind, id: &str) -> PathBuf {
        self.root.join(kind.dir_name()).join(id)
    }

    pub fn versions(&self, kind: ArtifactKind, id: &str) -> Result<Vec<u64>, StoreError> {
        validate_id(id)?;
        let dir = self.artifact_dir(kind, id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut versions: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_version(&e.file_name().to_string_lossy()))
            .collect();
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn latest_version(&self, kind: ArtifactKind, id: &str) -> Result<Option<u64>, StoreError> {
        Ok(self.versions(kind, id)?.last().copied())
    }

    /// Ids with at least one committed version.
    pub fn list(&self, kind: ArtifactKind) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(kind.dir_name());
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut ids = Vec::new();
        for e in entries.filter_map(|e| e.ok()) {
            let id = e.file_name().to_string_lossy().into_owned();
            if validate_id(&id).is_ok() && !self.versions(kind, &id)?.is_empty() {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Commits a new version of an artifact.
    pub fn put<T: Serialize>(&self, kind: ArtifactKind, id: &str, value: &T, expect: Expect, clock: &dyn Clock) -> Result<ArtifactRef, StoreError> {
        validate_id(id)?;
        let dir = self.artifact_dir(kind, id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let current = self.latest_version(kind, id)?.unwrap_or(0);
        if let Expect::Version(expected) = expect {
            if expected != current {
                return Err(StoreError::Conflict {
                    kind,
                    id: id.into(),
                    expected,
                    found: current,
                });
            }
        }
        let mut body = serde_json::to_vec(value).map_err(|e| StoreError::Corrupt {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        body.push(b'\n');

        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::SeqCst)
        ));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&body).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        let version = current + 1;
        let target = dir.join(version_file(version));
        let linked = fs::hard_link(&tmp, &target);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let found = self.latest_version(kind, id)?.unwrap_or(version);
                return match expect {
                    Expect::Version(expected) => Err(StoreError::Conflict {
                        kind,
                        id: id.into(),
                        expected,
                        found,
                    }),
                    Expect::Any => self.put(kind, id, value, expect, clock),
                };
            }
            Err(e) => return Err(io_err(&target)(e)),
        }

        let entry = JournalEntry {
            committed_at: clock.now(),
            kind,
            id: id.into(),
            version,
            sha256: hex::encode(Sha256::digest(&body)),
        };
        self.append_journal(&entry)?;
        Ok(ArtifactRef {
            kind,
            id: id.into(),
            version,
        })
    }

    fn append_journal(&self, entry: &JournalEntry) -> Result<(), StoreError> {
        let path = self.root.join(JOURNAL_FILE);
        let mut line = serde_json::to_string(entry).expect("journal entry serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))
    }

    pub fn journal(&self) -> Result<Vec<JournalEntry>, StoreError> {
        let path = self.root.join(JOURNAL_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Reads one version, or the latest when `version` is `None`.
    pub fn get<T: DeserializeOwned>(&self, kind: ArtifactKind, id: &str, version: Option<u64>) -> Result<(T, u64), StoreError> {
        validate_id(id)?;
        let not_found = || StoreError::NotFound {
            kind,
            id: id.into(),
            version,
        };
        let version = match version {
            Some(v) => v,
            None => self.latest_version(kind, id)?.ok_or_else(not_found)?,
        };
        let path = self.artifact_dir(kind, id).join(version_file(version));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(not_found()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let value = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })?;
        Ok((value, version))
    }

    /// Latest version, or `None` when the artifact does not exist.
    pub fn get_latest<T: DeserializeOwned>(&self, kind: ArtifactKind, id: &str) -> Result<Option<T>, StoreError> {
        match self.get(kind, id, None) {
            Ok((v, _)) => Ok(Some(v)),
            Err(StoreError::NotFound { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Latest finals of every dimension that has them.
    pub fn all_finals(&self) -> Result<BTreeMap<String, FinalLabels>, StoreError> {
        let mut out = BTreeMap::new();
        for id in self.list(ArtifactKind::Finals)? {
            let (f, _): (FinalLabels, _) = self.get(ArtifactKind::Finals, &id, None)?;
            out.insert(f.dimension_id.clone(), f);
        }
        Ok(out)
    }

    /// Runs a query over the stored corpus and finals.
    pub fn query_papers(&self, corpus_id: &str, filter: &QueryFilter) -> Result<QueryPage, StoreError> {
        let corpus: Corpus = self.get_latest(ArtifactKind::Corpus, corpus_id)?.unwrap_or_default();
        query_papers(&corpus, &self.all_finals()?, filter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConstraint {
    pub dimension_id: String,
    /// A label, or a bare class number for subclass-indexed dimensions.
    pub label: String,
    pub mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default)]
    pub year_from: Option<i32>,
    #[serde(default)]
    pub year_to: Option<i32>,
    #[serde(default)]
    pub constraints: Vec<LabelConstraint>,
    #[serde(default)]
    pub keyword: Option<String>,
    #[serde(default = "default_limit")]
    pub limit: usize,
    #[serde(default)]
    pub offset: usize,
}

fn default_limit() -> usize {
    50
}

impl Default for QueryFilter {
    fn default() -> Self {
        Self {
            year_from: None,
            year_to: None,
            constraints: Vec::new(),
            keyword: None,
            limit: default_limit(),
            offset: 0,
        }
    }
}

impl QueryFilter {
    pub fn validate(&self) -> Result<(), StoreError> {
        if let (Some(a), Some(b)) = (self.year_from, self.year_to) {
            if a > b {
                return Err(StoreError::InvalidFilter(format!("year range {a}..{b} is empty")));
            }
        }
        if self.limit == 0 {
            return Err(StoreError::InvalidFilter("limit must be at least 1".into()));
        }
        Ok(())
    }

    fn matches(&self, paper: &PaperRecord, labels: &BTreeMap<String, LabelSet>) -> bool {
        if self.year_from.is_some_and(|y| paper.year < y) || self.year_to.is_some_and(|y| paper.year > y) {
            return false;
        }
        if let Some(k) = self.keyword.as_deref().filter(|k| !k.is_empty()) {
            let k = k.to_lowercase();
            if !paper.title.to_lowercase().contains(&k) && !paper.abstract_text.to_lowercase().contains(&k) {
                return false;
            }
        }
        self.constraints.iter().all(|c| {
            let has = labels.get(&c.dimension_id).is_some_and(|l| label_matches(l, &c.label));
            match c.mode {
                LabelMode::Include => has,
                LabelMode::Exclude => !has,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperView {
    #[serde(flatten)]
    pub paper: PaperRecord,
    /// Final labels per dimension.
    pub labels: BTreeMap<String, LabelSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub papers: Vec<PaperView>,
}

fn labels_of(id: &PaperId, finals: &BTreeMap<String, FinalLabels>) -> BTreeMap<String, LabelSet> {
    finals
        .iter()
        .filter_map(|(dim, f)| f.labels.get(id).map(|l| (dim.clone(), l.clone())))
        .collect()
}

/// Conjunctive filter; results ordered newest first, then by paper id.
pub fn query_papers(corpus: &Corpus, finals: &BTreeMap<String, FinalLabels>, filter: &QueryFilter) -> Result<QueryPage, StoreError> {
    filter.validate()?;
    let mut hits: Vec<(&PaperRecord, BTreeMap<String, LabelSet>)> = corpus
        .papers()
        .map(|p| (p, labels_of(&p.paper_id, finals)))
        .filter(|(p, labels)| filter.matches(p, labels))
        .collect();
    hits.sort_by(|(a, _), (b, _)| b.year.cmp(&a.year).then_with(|| a.paper_id.cmp(&b.paper_id)));
    let total = hits.len();
    let papers = hits
        .into_iter()
        .skip(filter.offset)
        .take(filter.limit)
        .map(|(p, labels)| PaperView {
            paper: p.clone(),
            labels,
        })
        .collect();
    Ok(QueryPage {
        total,
        offset: filter.offset,
        limit: filter.limit,
        papers,
    })
}
