//! Repeated classification runs, text mapping, consolidation and the
//! dimension gate.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PaperRecord;
use crate::llm::{parse_response, Gateway, RequestContext};
use crate::taxonomy::{render_prompt, AnswerMode, TaxonomyDimension, TaxonomyError};
use crate::{format_percent, Clock, LabelSet, PaperId};

/// Model name recorded for deterministic keyword classification.
pub const TEXT_MAPPING_MODEL: &str = "text-mapping";

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("dimension `{dimension}` depends on `{gate}` but no gate set was supplied")]
    MissingGate { dimension: String, gate: String },
    #[error("paper `{0}` is not gate-positive")]
    NotGatePositive(PaperId),
    #[error("run set belongs to {found}, expected {expected}")]
    RunSetMismatch { expected: String, found: String },
    #[error("run set has no successful assignments")]
    NoOkRuns,
    #[error(transparent)]
    Prompt(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    Ok,
    ParseFailed,
    ProviderFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub paper_id: PaperId,
    pub dimension_id: String,
    pub run_index: u32,
    pub labels: LabelSet,
    pub model_name: String,
    pub prompt_version: u32,
    pub produced_at: DateTime<Utc>,
    pub status: AssignmentStatus,
    /// Raw response or error text kept for audit when the status is not ok.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl LabelAssignment {
    pub fn is_ok(&self) -> bool {
        self.status == AssignmentStatus::Ok
    }
}

/// All assignments of one (dimension, model, prompt version, repetitions) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub dimension_id: String,
    pub model_name: String,
    pub prompt_version: u32,
    pub repetitions: u32,
    pub targets: Vec<PaperId>,
    pub assignments: Vec<LabelAssignment>,
}

impl RunSet {
    pub fn new(dimension_id: &str, model_name: &str, prompt_version: u32, repetitions: u32) -> Self {
        Self {
            dimension_id: dimension_id.into(),
            model_name: model_name.into(),
            prompt_version,
            repetitions,
            targets: Vec::new(),
            assignments: Vec::new(),
        }
    }

    /// Storage identity, also the idempotency key for classification jobs.
    pub fn identity(&self) -> String {
        run_set_identity(&self.dimension_id, &self.model_name, self.prompt_version, self.repetitions)
    }

    pub fn contains(&self, paper_id: &PaperId, run_index: u32) -> bool {
        self.assignments
            .iter()
            .any(|a| &a.paper_id == paper_id && a.run_index == run_index)
    }

    pub fn runs_for<'a>(&'a self, paper_id: &'a PaperId) -> impl Iterator<Item = &'a LabelAssignment> {
        self.assignments.iter().filter(move |a| &a.paper_id == paper_id)
    }

    /// Assignments grouped by paper, in paper-id then run order.
    pub fn by_paper(&self) -> BTreeMap<&PaperId, Vec<&LabelAssignment>> {
        let mut map: BTreeMap<&PaperId, Vec<&LabelAssignment>> = BTreeMap::new();
        for a in &self.assignments {
            map.entry(&a.paper_id).or_default().push(a);
        }
        for runs in map.values_mut() {
            runs.sort_by_key(|a| a.run_index);
        }
        map
    }

    /// Fraction of targets with an ok assignment in every run.
    pub fn coverage(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        let groups = self.by_paper();
        let full = self
            .targets
            .iter()
            .filter(|p| {
                groups.get(p).is_some_and(|runs| {
                    runs.iter().filter(|a| a.is_ok()).count() == self.repetitions as usize
                })
            })
            .count();
        full as f64 / self.targets.len() as f64
    }

    pub fn total_expected(&self) -> usize {
        self.targets.len() * self.repetitions as usize
    }

    fn sort(&mut self) {
        self.assignments
            .sort_by(|a, b| (&a.paper_id, a.run_index).cmp(&(&b.paper_id, b.run_index)));
    }

    /// One assignment per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for a in &self.assignments {
            out.push_str(&serde_json::to_string(a).expect("assignment serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a run set from exported assignment lines. Targets are the
    /// distinct papers seen; repetitions is the highest run index.
    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut assignments = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let a: LabelAssignment = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            assignments.push(a);
        }
        let first = assignments.first().ok_or("no assignments")?;
        let mut set = RunSet::new(&first.dimension_id, &first.model_name, first.prompt_version, 0);
        for a in &assignments {
            if a.dimension_id != set.dimension_id || a.model_name != set.model_name || a.prompt_version != set.prompt_version {
                return Err(format!("mixed run sets: {} / {} / v{}", a.dimension_id, a.model_name, a.prompt_version));
            }
        }
        set.repetitions = assignments.iter().map(|a| a.run_index).max().unwrap_or(0);
        let targets: BTreeSet<PaperId> = assignments.iter().map(|a| a.paper_id.clone()).collect();
        set.targets = targets.into_iter().collect();
        set.assignments = assignments;
        set.sort();
        Ok(set)
    }
}

pub fn run_set_identity(dimension_id: &str, model_name: &str, prompt_version: u32, repetitions: u32) -> String {
    format!("{dimension_id}__{model_name}__v{prompt_version}__r{repetitions}")
}

/// Identity of the run set [`run_dimension`] produces for these inputs.
pub fn expected_identity(dimension: &TaxonomyDimension, model_name: &str, repetitions: u32) -> String {
    if dimension.answer_mode == AnswerMode::TextMapped {
        return run_set_identity(&dimension.dimension_id, TEXT_MAPPING_MODEL, 0, 1);
    }
    let version = dimension.prompt_template.as_ref().map_or(0, |t| t.version);
    run_set_identity(&dimension.dimension_id, model_name, version, repetitions)
}

pub struct RunOptions<'a> {
    pub repetitions: u32,
    /// Gate-positive papers, required when the dimension depends on a gate.
    pub gate: Option<&'a BTreeSet<PaperId>>,
    pub clock: &'a dyn Clock,
    /// Stops issuing new requests once set; finished assignments are kept.
    pub cancel: Option<&'a AtomicBool>,
    /// Called once per new assignment, serialized.
    pub on_assignment: Option<&'a (dyn Fn(&LabelAssignment) + Sync)>,
}

impl<'a> RunOptions<'a> {
    pub fn new(repetitions: u32, clock: &'a dyn Clock) -> Self {
        Self {
            repetitions,
            gate: None,
            clock,
            cancel: None,
            on_assignment: None,
        }
    }
}

/// Keyword scan of title and abstract. No model call.
pub fn classify_text_mapped(paper: &PaperRecord, dimension: &TaxonomyDimension) -> LabelSet {
    let haystack = format!("{} {}", paper.title, paper.abstract_text).to_lowercase();
    let labels: LabelSet = dimension
        .labels
        .iter()
        .filter(|l| !l.sentinel)
        .filter(|l| l.keywords.iter().any(|k| haystack.contains(&k.to_lowercase())))
        .map(|l| l.label.clone())
        .collect();
    if labels.is_empty() {
        dimension.sentinel_set()
    } else {
        labels
    }
}

fn check_gate(papers: &[&PaperRecord], dimension: &TaxonomyDimension, gate: Option<&BTreeSet<PaperId>>) -> Result<(), ClassifierError> {
    if let Some(dep) = &dimension.depends_on {
        let gate = gate.ok_or_else(|| ClassifierError::MissingGate {
            dimension: dimension.dimension_id.clone(),
            gate: dep.clone(),
        })?;
        if let Some(p) = papers.iter().find(|p| !gate.contains(&p.paper_id)) {
            return Err(ClassifierError::NotGatePositive(p.paper_id.clone()));
        }
    }
    Ok(())
}

/// Deterministic single-run labeling of a text-mapped dimension.
pub fn run_text_mapped(
    papers: &[&PaperRecord],
    dimension: &TaxonomyDimension,
    options: &RunOptions<'_>,
) -> Result<RunSet, ClassifierError> {
    check_gate(papers, dimension, options.gate)?;
    let mut set = RunSet::new(&dimension.dimension_id, TEXT_MAPPING_MODEL, 0, 1);
    let at = options.clock.now();
    for p in papers {
        set.targets.push(p.paper_id.clone());
        let a = LabelAssignment {
            paper_id: p.paper_id.clone(),
            dimension_id: dimension.dimension_id.clone(),
            run_index: 1,
            labels: classify_text_mapped(p, dimension),
            model_name: TEXT_MAPPING_MODEL.into(),
            prompt_version: 0,
            produced_at: at,
            status: AssignmentStatus::Ok,
            detail: None,
        };
        if let Some(cb) = options.on_assignment {
            cb(&a);
        }
        set.assignments.push(a);
    }
    set.sort();
    Ok(set)
}

/// Labels every (paper, run) pair not already present in `resume`.
///
/// Per-item provider and parse failures are recorded as assignments, never
/// returned as errors. Text-mapped dimensions are delegated to
/// [`run_text_mapped`] and do not touch the gateway.
pub fn run_dimension(
    papers: &[&PaperRecord],
    dimension: &TaxonomyDimension,
    gateway: &Gateway,
    options: &RunOptions<'_>,
    resume: Option<RunSet>,
) -> Result<RunSet, ClassifierError> {
    if dimension.answer_mode == AnswerMode::TextMapped {
        return run_text_mapped(papers, dimension, options);
    }
    if options.repetitions == 0 {
        return Err(ClassifierError::ZeroRepetitions);
    }
    check_gate(papers, dimension, options.gate)?;
    let template = dimension.template()?;
    let mut set = RunSet::new(&dimension.dimension_id, gateway.model_name(), template.version, options.repetitions);
    if let Some(prev) = resume {
        if prev.identity() != set.identity() {
            return Err(ClassifierError::RunSetMismatch {
                expected: set.identity(),
                found: prev.identity(),
            });
        }
        set = prev;
    }
    let mut targets: BTreeSet<PaperId> = set.targets.iter().cloned().collect();
    targets.extend(papers.iter().map(|p| p.paper_id.clone()));
    set.targets = targets.into_iter().collect();

    let mut work: Vec<(usize, u32)> = Vec::new();
    let mut prompts = Vec::with_capacity(papers.len());
    for (i, p) in papers.iter().enumerate() {
        prompts.push(render_prompt(dimension, p)?);
        for run in 1..=options.repetitions {
            if !set.contains(&p.paper_id, run) {
                work.push((i, run));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let produced = Mutex::new(Vec::with_capacity(work.len()));
    let workers = gateway.config().max_concurrent.max(1).min(work.len());
    let label_one = |i: usize, run: u32| -> LabelAssignment {
        let paper = papers[i];
        let ctx = RequestContext {
            paper_id: paper.paper_id.to_string(),
            dimension_id: dimension.dimension_id.clone(),
            run_index: run,
        };
        let (labels, status, detail) = match gateway.complete(&prompts[i], &ctx) {
            Err(e) => (LabelSet::new(), AssignmentStatus::ProviderFailed, Some(e.to_string())),
            Ok(resp) => match parse_response(&resp.text, dimension) {
                Ok(labels) => (labels, AssignmentStatus::Ok, None),
                Err(e) => (LabelSet::new(), AssignmentStatus::ParseFailed, Some(e.to_string())),
            },
        };
        LabelAssignment {
            paper_id: paper.paper_id.clone(),
            dimension_id: dimension.dimension_id.clone(),
            run_index: run,
            labels,
            model_name: gateway.model_name().to_string(),
            prompt_version: template.version,
            produced_at: options.clock.now(),
            status,
            detail,
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if options.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(i, run)) = work.get(k) else { break };
                let assignment = label_one(i, run);
                let mut guard = produced.lock().expect("results lock");
                if let Some(cb) = options.on_assignment {
                    cb(&assignment);
                }
                guard.push(assignment);
            });
        }
    });

    set.assignments.extend(produced.into_inner().expect("results lock"));
    set.sort();
    Ok(set)
}

/// Final labels of one dimension after consolidating repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLabels {
    pub dimension_id: String,
    pub model_name: String,
    pub prompt_version: u32,
    pub labels: BTreeMap<PaperId, LabelSet>,
    /// Papers without a single successful run.
    pub unclassified: BTreeSet<PaperId>,
}

impl FinalLabels {
    pub fn get(&self, paper_id: &str) -> Option<&LabelSet> {
        self.labels.get(paper_id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `paper_id,labels` with labels joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("paper_id,labels\n");
        for (id, labels) in &self.labels {
            let joined = labels.iter().map(String::as_str).collect::<Vec<_>>().join(";");
            out.push_str(&format!("{id},{joined}\n"));
        }
        out
    }
}

/// Majority vote for binary dimensions (ties go to the negative label);
/// for multi-label dimensions a label survives if it appears in at least
/// `ceil(ok_runs / 2)` runs. Empty results become the sentinel.
pub fn consolidate(run_set: &RunSet, dimension: &TaxonomyDimension) -> Result<FinalLabels, ClassifierError> {
    if !run_set.assignments.iter().any(LabelAssignment::is_ok) {
        return Err(ClassifierError::NoOkRuns);
    }
    let groups = run_set.by_paper();
    let mut finals = FinalLabels {
        dimension_id: run_set.dimension_id.clone(),
        model_name: run_set.model_name.clone(),
        prompt_version: run_set.prompt_version,
        labels: BTreeMap::new(),
        unclassified: BTreeSet::new(),
    };
    for paper in &run_set.targets {
        let ok: Vec<&LabelAssignment> = groups
            .get(paper)
            .map(|runs| runs.iter().copied().filter(|a| a.is_ok()).collect())
            .unwrap_or_default();
        if ok.is_empty() {
            finals.unclassified.insert(paper.clone());
            continue;
        }
        let labels = if dimension.answer_mode == AnswerMode::Binary {
            let yes = ok.iter().filter(|a| a.labels.contains(dimension.positive_label())).count();
            let winner = if 2 * yes > ok.len() {
                dimension.positive_label()
            } else {
                dimension.negative_label()
            };
            LabelSet::from([winner.to_string()])
        } else {
            let threshold = ok.len().div_ceil(2);
            let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
            for a in &ok {
                for l in &a.labels {
                    *counts.entry(l).or_default() += 1;
                }
            }
            let kept: LabelSet = counts
                .into_iter()
                .filter(|(_, n)| *n >= threshold)
                .map(|(l, _)| l.clone())
                .collect();
            if kept.is_empty() {
                dimension.sentinel_set()
            } else {
                kept
            }
        };
        finals.labels.insert(paper.clone(), labels);
    }
    Ok(finals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub positive: BTreeSet<PaperId>,
    pub total: usize,
}

impl GateResult {
    pub fn count(&self) -> usize {
        self.positive.len()
    }

    pub fn proportion(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.positive.len() as f64 / self.total as f64
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "gate_positive={} total={} proportion={}",
            self.count(),
            self.total,
            format_percent(self.proportion())
        )
    }
}

/// Papers whose final gate label is the positive one.
pub fn gate_positive<'a>(
    papers: impl IntoIterator<Item = &'a PaperId>,
    gate_finals: &FinalLabels,
    gate_dimension: &TaxonomyDimension,
) -> GateResult {
    let positive_label = gate_dimension.positive_label();
    let mut total = 0;
    let mut positive = BTreeSet::new();
    for id in papers {
        total += 1;
        if gate_finals.get(id.as_str()).is_some_and(|l| l.contains(positive_label)) {
            positive.insert(id.clone());
        }
    }
    GateResult { positive, total }
}
