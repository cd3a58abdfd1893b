//! Bibliographic corpus: ingestion of tabular exports, validation, deduplication
//! and incremental updates.
//!
//! Rows are processed in file order against the growing corpus, so a file that
//! repeats a paper merges the repeat into the first occurrence. Every input row
//! lands in exactly one bucket of the returned [`CorpusDelta`]:
//! `rows = added + updated + rejected + duplicates_merged`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::PaperId;

/// Columns required by the `scopus_csv` profile, in export order.
pub const SCOPUS_COLUMNS: [&str; 9] = [
    "Authors",
    "Title",
    "Year",
    "Source title",
    "Abstract",
    "References",
    "EID",
    "DOI",
    "Document Type",
];

/// Placeholder Scopus writes when a record has no abstract.
const SCOPUS_NO_ABSTRACT: &str = "[no abstract available]";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown format profile `{0}` (expected scopus_csv or records_jsonl)")]
    UnknownProfile(String),
    #[error("header mismatch, missing columns: {}", .missing.join(", "))]
    HeaderMismatch { missing: Vec<String> },
    #[error("malformed export: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocType {
    Article,
    ConferencePaper,
    Review,
    ConferenceReview,
    #[default]
    Other,
}

impl DocType {
    /// Maps Scopus "Document Type" values; anything unrecognised is `Other`.
    pub fn from_label(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().replace(['_', '-'], " ").as_str() {
            "article" | "ar" => DocType::Article,
            "conference paper" | "cp" => DocType::ConferencePaper,
            "review" | "re" => DocType::Review,
            "conference review" | "cr" => DocType::ConferenceReview,
            _ => DocType::Other,
        }
    }
}

/// One validated bibliographic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: PaperId,
    pub external_id: Option<String>,
    pub doi: Option<String>,
    pub title: String,
    pub authors: Vec<String>,
    pub year: i32,
    pub source_title: String,
    pub doc_type: DocType,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub reference_strings: Vec<String>,
    pub ingested_at: DateTime<Utc>,
}

impl PaperRecord {
    fn same_content(&self, other: &PaperRecord) -> bool {
        self.external_id == other.external_id
            && self.doi == other.doi
            && self.title == other.title
            && self.authors == other.authors
            && self.year == other.year
            && self.source_title == other.source_title
            && self.doc_type == other.doc_type
            && self.abstract_text == other.abstract_text
            && self.reference_strings == other.reference_strings
    }
}

/// A record as it appears in an export, before validation. Every field is text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RawRecord {
    pub paper_id: Option<String>,
    pub external_id: Option<String>,
    pub doi: Option<String>,
    pub title: String,
    pub authors: Vec<String>,
    #[serde(deserialize_with = "year_as_text")]
    pub year: String,
    pub source_title: String,
    pub doc_type: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub reference_strings: Vec<String>,
}

fn year_as_text<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    let value = serde_json::Value::deserialize(d)?;
    Ok(match value {
        serde_json::Value::String(s) => s,
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    MissingAbstract,
    MissingTitle,
    UnparseableRow,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Rejected(RejectionReason),
}

/// Checks a raw record against the record invariants.
///
/// Valid iff the title is non-empty after whitespace normalization, the year
/// parses into `1900..=current_year + 1`, and the abstract is non-empty.
pub fn validate(record: &RawRecord, current_year: i32) -> Verdict {
    match check(record, current_year) {
        Ok(_) => Verdict::Valid,
        Err(reason) => Verdict::Rejected(reason),
    }
}

fn check(record: &RawRecord, current_year: i32) -> Result<i32, RejectionReason> {
    if collapse_whitespace(&record.title).is_empty() {
        return Err(RejectionReason::MissingTitle);
    }
    let year = parse_year(&record.year, current_year).ok_or(RejectionReason::UnparseableRow)?;
    let abstract_text = record.abstract_text.trim();
    if abstract_text.is_empty() || abstract_text.eq_ignore_ascii_case(SCOPUS_NO_ABSTRACT) {
        return Err(RejectionReason::MissingAbstract);
    }
    Ok(year)
}

fn parse_year(text: &str, current_year: i32) -> Option<i32> {
    let year: i32 = text.trim().parse().ok()?;
    (1900..=current_year + 1).contains(&year).then_some(year)
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
}

impl RawRecord {
    /// Validates and converts into a [`PaperRecord`] stamped with `at`.
    pub fn into_record(self, at: DateTime<Utc>) -> Result<PaperRecord, RejectionReason> {
        let year = check(&self, at.year())?;
        let title = collapse_whitespace(&self.title);
        let external_id = non_empty(self.external_id);
        let doi = non_empty(self.doi).map(|d| d.to_ascii_lowercase());
        let paper_id = match non_empty(self.paper_id) {
            Some(id) => PaperId::new(id),
            None => derive_paper_id(external_id.as_deref(), doi.as_deref(), &title, year),
        };
        Ok(PaperRecord {
            paper_id,
            external_id,
            doi,
            title,
            authors: self
                .authors
                .into_iter()
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect(),
            year,
            source_title: self.source_title.trim().to_string(),
            doc_type: DocType::from_label(&self.doc_type),
            abstract_text: self.abstract_text.trim().to_string(),
            reference_strings: self
                .reference_strings
                .into_iter()
                .map(|r| r.trim().to_string())
                .filter(|r| !r.is_empty())
                .collect(),
            ingested_at: at,
        })
    }

    fn quarantine_key(&self) -> String {
        if let Some(eid) = non_empty(self.external_id.clone()) {
            return format!("eid:{eid}");
        }
        if let Some(doi) = non_empty(self.doi.clone()) {
            return format!("doi:{}", doi.to_ascii_lowercase());
        }
        format!("title:{}|{}", normalize_title(&self.title), self.year.trim())
    }
}

/// Paper ids prefer the source key; otherwise a short digest of the strongest
/// available identity.
fn derive_paper_id(external_id: Option<&str>, doi: Option<&str>, title: &str, year: i32) -> PaperId {
    if let Some(eid) = external_id {
        return PaperId::new(eid);
    }
    let key = match doi {
        Some(doi) => format!("doi:{doi}"),
        None => format!("title:{}|{year}", normalize_title(title)),
    };
    let digest = Sha256::digest(key.as_bytes());
    PaperId::new(format!("p{}", &hex::encode(digest)[..16]))
}

/// Title match key: lowercase, punctuation replaced by spaces, whitespace
/// collapsed, trimmed.
pub fn normalize_title(title: &str) -> String {
    let mapped: String = title
        .chars()
        .flat_map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().collect::<Vec<_>>()
            } else {
                vec![' ']
            }
        })
        .collect();
    collapse_whitespace(&mapped)
}

/// Column mapping for an export file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum FormatProfile {
    ScopusCsv { reference_delimiter: String },
    RecordsJsonl,
}

impl FormatProfile {
    pub fn scopus_csv() -> Self {
        FormatProfile::ScopusCsv {
            reference_delimiter: "; ".to_string(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FormatProfile::ScopusCsv { .. } => "scopus_csv",
            FormatProfile::RecordsJsonl => "records_jsonl",
        }
    }
}

impl FromStr for FormatProfile {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scopus_csv" => Ok(FormatProfile::scopus_csv()),
            "records_jsonl" => Ok(FormatProfile::RecordsJsonl),
            other => Err(CorpusError::UnknownProfile(other.to_string())),
        }
    }
}

/// A parsed row, or `None` when the row could not be read at all.
pub type ParsedRow = Option<RawRecord>;

/// Reads an export into raw rows. Header problems are errors; bad rows are `None`.
pub fn read_export(path: &Path, profile: &FormatProfile) -> Result<Vec<ParsedRow>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match profile {
        FormatProfile::ScopusCsv { reference_delimiter } => read_scopus_csv(file, reference_delimiter),
        FormatProfile::RecordsJsonl => read_records_jsonl(file, path),
    }
}

pub fn read_scopus_csv<R: Read>(reader: R, reference_delimiter: &str) -> Result<Vec<ParsedRow>, CorpusError> {
    let mut csv = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = csv
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_string())
        .collect();
    let missing: Vec<String> = SCOPUS_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::HeaderMismatch { missing });
    }
    let column = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let idx: Vec<usize> = SCOPUS_COLUMNS.iter().map(|c| column(c)).collect();
    let width = headers.len();

    let mut rows = Vec::new();
    for result in csv.records() {
        let record = match result {
            Ok(r) if r.len() == width => r,
            _ => {
                rows.push(None);
                continue;
            }
        };
        let field = |i: usize| record.get(idx[i]).unwrap_or("").to_string();
        let authors_field = field(0);
        let authors_sep = if authors_field.contains(';') { ';' } else { ',' };
        let references = field(5);
        rows.push(Some(RawRecord {
            paper_id: None,
            authors: authors_field.split(authors_sep).map(|a| a.trim().to_string()).collect(),
            title: field(1),
            year: field(2),
            source_title: field(3),
            abstract_text: field(4),
            reference_strings: if references.trim().is_empty() {
                Vec::new()
            } else {
                references.split(reference_delimiter).map(str::to_string).collect()
            },
            external_id: Some(field(6)),
            doi: Some(field(7)),
            doc_type: field(8),
        }));
    }
    Ok(rows)
}

fn read_records_jsonl<R: Read>(reader: R, path: &Path) -> Result<Vec<ParsedRow>, CorpusError> {
    let mut rows = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str::<RawRecord>(&line).ok());
    }
    Ok(rows)
}

/// A row that failed validation, kept so a later export can complete it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantinedRecord {
    pub reason: RejectionReason,
    pub record: RawRecord,
}

/// Outcome of one ingestion pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusDelta {
    pub added: Vec<PaperRecord>,
    pub updated: Vec<PaperRecord>,
    pub rejected: Vec<(usize, RejectionReason)>,
    pub duplicates_merged: usize,
}

impl CorpusDelta {
    /// True when the pass changed no record in the corpus.
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.updated.is_empty()
    }

    pub fn rows_accounted(&self) -> usize {
        self.added.len() + self.updated.len() + self.rejected.len() + self.duplicates_merged
    }

    pub fn summary(&self) -> String {
        format!(
            "added={} updated={} rejected={} duplicates_merged={}",
            self.added.len(),
            self.updated.len(),
            self.rejected.len(),
            self.duplicates_merged
        )
    }
}

enum Match {
    None,
    One(PaperId),
    Ambiguous,
}

/// A deduplicated collection of papers plus the quarantine of rejected rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: BTreeMap<PaperId, PaperRecord>,
    pub quarantine: BTreeMap<String, QuarantinedRecord>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PaperRecord> {
        self.records.get(id)
    }

    pub fn papers(&self) -> impl Iterator<Item = &PaperRecord> + Clone {
        self.records.values()
    }

    /// Reads `path` under `profile` and applies every row.
    pub fn ingest_export(
        &mut self,
        path: &Path,
        profile: &FormatProfile,
        at: DateTime<Utc>,
    ) -> Result<CorpusDelta, CorpusError> {
        let rows = read_export(path, profile)?;
        Ok(self.apply_rows(rows, at))
    }

    /// Daily-update entry point: identical to [`Corpus::ingest_export`], so
    /// applying an already-ingested file leaves the corpus unchanged.
    pub fn merge_update(
        &mut self,
        delta_file: &Path,
        profile: &FormatProfile,
        at: DateTime<Utc>,
    ) -> Result<CorpusDelta, CorpusError> {
        self.ingest_export(delta_file, profile, at)
    }

    /// Applies parsed rows in order. `None` rows are rejected as unparseable.
    pub fn apply_rows(&mut self, rows: Vec<ParsedRow>, at: DateTime<Utc>) -> CorpusDelta {
        let mut delta = CorpusDelta::default();
        let mut added: Vec<PaperId> = Vec::new();
        let mut updated: Vec<PaperId> = Vec::new();
        let mut touched: BTreeSet<PaperId> = BTreeSet::new();

        for (index, row) in rows.into_iter().enumerate() {
            let Some(raw) = row else {
                delta.rejected.push((index, RejectionReason::UnparseableRow));
                continue;
            };
            let key = raw.quarantine_key();
            let record = match raw.clone().into_record(at) {
                Ok(record) => record,
                Err(reason) => {
                    delta.rejected.push((index, reason));
                    self.quarantine.insert(key, QuarantinedRecord { reason, record: raw });
                    continue;
                }
            };
            self.quarantine.remove(&key);
            match self.find_match(&record) {
                Match::Ambiguous => delta.rejected.push((index, RejectionReason::Duplicate)),
                Match::None => {
                    let id = record.paper_id.clone();
                    if self.records.contains_key(&id) {
                        // Derived id collision with a record the keys did not match.
                        delta.rejected.push((index, RejectionReason::Duplicate));
                        continue;
                    }
                    self.records.insert(id.clone(), record);
                    touched.insert(id.clone());
                    added.push(id);
                }
                Match::One(id) => {
                    let existing = &self.records[&id];
                    let merged = merge_records(existing, &record, at);
                    let changed = !existing.same_content(&merged);
                    if changed {
                        self.records.insert(id.clone(), merged);
                    }
                    if changed && !touched.contains(&id) {
                        touched.insert(id.clone());
                        updated.push(id);
                    } else {
                        delta.duplicates_merged += 1;
                    }
                }
            }
        }
        delta.added = added.iter().map(|id| self.records[id].clone()).collect();
        delta.updated = updated.iter().map(|id| self.records[id].clone()).collect();
        delta
    }

    /// Key precedence: external id, then DOI, then (normalized title, year).
    fn find_match(&self, record: &PaperRecord) -> Match {
        let pick = |ids: Vec<&PaperId>| -> Option<Match> {
            match ids.len() {
                0 => None,
                1 => Some(Match::One(ids[0].clone())),
                _ => Some(Match::Ambiguous),
            }
        };
        if let Some(eid) = &record.external_id {
            let hits: Vec<_> = self
                .records
                .values()
                .filter(|r| r.external_id.as_deref() == Some(eid))
                .map(|r| &r.paper_id)
                .collect();
            if let Some(m) = pick(hits) {
                return m;
            }
        }
        if let Some(doi) = &record.doi {
            let hits: Vec<_> = self
                .records
                .values()
                .filter(|r| r.doi.as_deref() == Some(doi))
                .map(|r| &r.paper_id)
                .collect();
            if let Some(m) = pick(hits) {
                return m;
            }
        }
        let key = normalize_title(&record.title);
        let hits: Vec<_> = self
            .records
            .values()
            .filter(|r| r.year == record.year && normalize_title(&r.title) == key)
            // A record with a different external id is a distinct paper.
            .filter(|r| match (&r.external_id, &record.external_id) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            })
            .map(|r| &r.paper_id)
            .collect();
        pick(hits).unwrap_or(Match::None)
    }
}

/// Incoming non-empty fields win; the existing paper id is kept.
fn merge_records(existing: &PaperRecord, incoming: &PaperRecord, at: DateTime<Utc>) -> PaperRecord {
    let mut merged = existing.clone();
    if incoming.external_id.is_some() {
        merged.external_id = incoming.external_id.clone();
    }
    if incoming.doi.is_some() {
        merged.doi = incoming.doi.clone();
    }
    if !incoming.title.is_empty() {
        merged.title = incoming.title.clone();
    }
    if !incoming.authors.is_empty() {
        merged.authors = incoming.authors.clone();
    }
    merged.year = incoming.year;
    if !incoming.source_title.is_empty() {
        merged.source_title = incoming.source_title.clone();
    }
    if incoming.doc_type != DocType::Other {
        merged.doc_type = incoming.doc_type;
    }
    if !incoming.abstract_text.is_empty() {
        merged.abstract_text = incoming.abstract_text.clone();
    }
    if !incoming.reference_strings.is_empty() {
        merged.reference_strings = incoming.reference_strings.clone();
    }
    if !merged.same_content(existing) {
        merged.ingested_at = at;
    }
    merged
}
