//! Metrics against human gold labels and model comparison tables.
//!
//! Ratios whose denominator is zero are reported as `None` together with a
//! count of the affected terms instead of being folded into zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{consolidate, ClassifierError, RunSet};
use crate::taxonomy::{AnswerMode, TaxonomyDimension};
use crate::{LabelSet, PaperId};

pub type LabelMap = BTreeMap<PaperId, LabelSet>;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("run set has no successful assignments on gold papers")]
    NoOkRuns,
    #[error("paper `{0}` has a prediction but no gold label")]
    MissingGold(PaperId),
    #[error("paper `{0}` has an empty label set")]
    EmptyLabelSet(PaperId),
    #[error("self-consistency needs at least 2 runs, got {0}")]
    TooFewRuns(u32),
    #[error("dimension `{0}` is not binary")]
    NotBinary(String),
    #[error("gold label `{label}` is not in the vocabulary of `{dimension}`")]
    UnknownLabel { dimension: String, label: String },
    #[error("gold record for `{found}` added to the `{expected}` gold set")]
    WrongDimension { expected: String, found: String },
    #[error("cannot compare bundles from different dimensions: {0:?}")]
    MixedDimensions(Vec<String>),
    #[error("nothing to compare")]
    NoBundles,
    #[error("consolidation failed: {0}")]
    Consolidation(String),
    #[error("gold file line {line}: {message}")]
    GoldSyntax { line: usize, message: String },
}

impl From<ClassifierError> for EvaluationError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NoOkRuns => EvaluationError::NoOkRuns,
            other => EvaluationError::Consolidation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabelSet {
    pub paper_id: PaperId,
    pub dimension_id: String,
    pub labels: LabelSet,
    pub annotator: String,
    pub annotated_at: DateTime<Utc>,
}

/// Human labels of one dimension, at most one record per paper.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldSet {
    pub dimension_id: String,
    pub records: BTreeMap<PaperId, GoldLabelSet>,
}

impl GoldSet {
    pub fn new(dimension_id: &str) -> Self {
        Self {
            dimension_id: dimension_id.into(),
            records: BTreeMap::new(),
        }
    }

    /// Adds or replaces a record after checking it against the vocabulary.
    /// Returns the replaced record, if any.
    pub fn insert(&mut self, record: GoldLabelSet, dimension: &TaxonomyDimension) -> Result<Option<GoldLabelSet>, EvaluationError> {
        if record.dimension_id != self.dimension_id || dimension.dimension_id != self.dimension_id {
            return Err(EvaluationError::WrongDimension {
                expected: self.dimension_id.clone(),
                found: record.dimension_id,
            });
        }
        if record.labels.is_empty() {
            return Err(EvaluationError::EmptyLabelSet(record.paper_id));
        }
        if let Some(bad) = record.labels.iter().find(|l| !dimension.contains_label(l)) {
            return Err(EvaluationError::UnknownLabel {
                dimension: self.dimension_id.clone(),
                label: bad.clone(),
            });
        }
        Ok(self.records.insert(record.paper_id.clone(), record))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> LabelMap {
        self.records
            .iter()
            .map(|(id, r)| (id.clone(), r.labels.clone()))
            .collect()
    }
}

/// Reads gold records from JSON lines; blank lines and `#` comments are skipped.
pub fn parse_gold_jsonl(text: &str) -> Result<Vec<GoldLabelSet>, EvaluationError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| EvaluationError::GoldSyntax {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Precision, recall and F1 with undefined terms left as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Number of 0/0 terms that were left out.
    pub undefined_terms: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn matched<'a>(pred: &'a LabelMap, gold: &'a LabelMap) -> Result<Vec<(&'a LabelSet, &'a LabelSet)>, EvaluationError> {
    if pred.is_empty() {
        return Err(EvaluationError::EmptyPredictions);
    }
    pred.iter()
        .map(|(id, p)| {
            let g = gold.get(id).ok_or_else(|| EvaluationError::MissingGold(id.clone()))?;
            if p.is_empty() || g.is_empty() {
                return Err(EvaluationError::EmptyLabelSet(id.clone()));
            }
            Ok((g, p))
        })
        .collect()
}

fn overlap(gold: &LabelSet, pred: &LabelSet) -> usize {
    gold.intersection(pred).count()
}

/// Mean over predicted papers of |y ∩ ŷ| / |y ∪ ŷ|.
pub fn jaccard_mean(pred: &LabelMap, gold: &LabelMap) -> Result<f64, EvaluationError> {
    let pairs = matched(pred, gold)?;
    let scores: Vec<f64> = pairs
        .iter()
        .map(|(g, p)| overlap(g, p) as f64 / g.union(p).count() as f64)
        .collect();
    Ok(mean(&scores).expect("non-empty"))
}

/// Fraction of predicted papers sharing at least one label with gold.
pub fn lenient_accuracy(pred: &LabelMap, gold: &LabelMap) -> Result<f64, EvaluationError> {
    let pairs = matched(pred, gold)?;
    let hits = pairs.iter().filter(|(g, p)| overlap(g, p) > 0).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// True/false positive and false negative counts pooled over all
/// (paper, label) pairs.
pub fn pooled_counts(pred: &LabelMap, gold: &LabelMap) -> Result<Counts, EvaluationError> {
    let mut c = Counts::default();
    for (g, p) in matched(pred, gold)? {
        let both = overlap(g, p);
        c.tp += both;
        c.fp += p.len() - both;
        c.fn_ += g.len() - both;
    }
    Ok(c)
}

/// Micro-averaged scores; F1 is `2TP / (2TP + FP + FN)`.
pub fn micro_prf(pred: &LabelMap, gold: &LabelMap) -> Result<Prf, EvaluationError> {
    let c = pooled_counts(pred, gold)?;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let undefined_terms = [precision, recall, f1].iter().filter(|v| v.is_none()).count();
    Ok(Prf {
        precision,
        recall,
        f1,
        undefined_terms,
    })
}

/// Per-paper precision, recall and F1, each averaged over papers.
pub fn sample_prf(pred: &LabelMap, gold: &LabelMap) -> Result<Prf, EvaluationError> {
    let pairs = matched(pred, gold)?;
    let (mut ps, mut rs, mut fs) = (Vec::new(), Vec::new(), Vec::new());
    let mut undefined_terms = 0;
    for (g, p) in pairs {
        let both = overlap(g, p);
        for (slot, value) in [
            (&mut ps, ratio(both, p.len())),
            (&mut rs, ratio(both, g.len())),
            (&mut fs, ratio(2 * both, g.len() + p.len())),
        ] {
            match value {
                Some(v) => slot.push(v),
                None => undefined_terms += 1,
            }
        }
    }
    Ok(Prf {
        precision: mean(&ps),
        recall: mean(&rs),
        f1: mean(&fs),
        undefined_terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistency {
    pub rate: Option<f64>,
    pub consistent: usize,
    pub counted: usize,
}

/// Share of papers whose label set is identical in all R runs. Papers
/// without R successful runs are not counted.
pub fn self_consistency(runs: &RunSet) -> Result<SelfConsistency, EvaluationError> {
    if runs.repetitions < 2 {
        return Err(EvaluationError::TooFewRuns(runs.repetitions));
    }
    let mut consistent = 0;
    let mut counted = 0;
    for assignments in runs.by_paper().values() {
        let ok: Vec<_> = assignments.iter().filter(|a| a.is_ok()).collect();
        let distinct_runs: BTreeSet<u32> = ok.iter().map(|a| a.run_index).collect();
        if distinct_runs.len() != runs.repetitions as usize {
            continue;
        }
        counted += 1;
        if ok.iter().all(|a| a.labels == ok[0].labels) {
            consistent += 1;
        }
    }
    Ok(SelfConsistency {
        rate: ratio(consistent, counted),
        consistent,
        counted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    pub run_index: u32,
    /// Gold papers with an ok assignment in this run.
    pub n: usize,
    /// Gold papers whose assignment failed or is missing in this run.
    pub excluded: usize,
    /// Exact label-set matches divided by `n`.
    pub accuracy: Option<f64>,
    /// Binary dimensions only, with the positive label as positive class.
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy_avg: f64,
    pub f1_avg: Option<f64>,
    pub per_run: Vec<RunDetail>,
}

fn per_run_details(runs: &RunSet, gold: &LabelMap, positive: Option<&str>) -> Vec<RunDetail> {
    (1..=runs.repetitions)
        .map(|run| {
            let mut n = 0;
            let mut correct = 0;
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for a in runs.assignments.iter().filter(|a| a.run_index == run && a.is_ok()) {
                let Some(g) = gold.get(&a.paper_id) else { continue };
                n += 1;
                if &a.labels == g {
                    correct += 1;
                }
                if let Some(pos) = positive {
                    match (a.labels.contains(pos), g.contains(pos)) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            RunDetail {
                run_index: run,
                n,
                excluded: gold.len() - n,
                accuracy: ratio(correct, n),
                f1: positive.and_then(|_| ratio(2 * tp, 2 * tp + fp + fn_)),
            }
        })
        .collect()
}

/// Accuracy and F1 per run, averaged over runs with at least one ok
/// assignment on a gold paper.
pub fn binary_metrics(runs: &RunSet, gold: &LabelMap, dimension: &TaxonomyDimension) -> Result<BinaryMetrics, EvaluationError> {
    if dimension.answer_mode != AnswerMode::Binary {
        return Err(EvaluationError::NotBinary(dimension.dimension_id.clone()));
    }
    if gold.is_empty() {
        return Err(EvaluationError::EmptyGold);
    }
    let per_run = per_run_details(runs, gold, Some(dimension.positive_label()));
    let accuracies: Vec<f64> = per_run.iter().filter_map(|r| r.accuracy).collect();
    if accuracies.is_empty() {
        return Err(EvaluationError::NoOkRuns);
    }
    let f1s: Vec<f64> = per_run.iter().filter_map(|r| r.f1).collect();
    Ok(BinaryMetrics {
        accuracy_avg: mean(&accuracies).expect("non-empty"),
        f1_avg: mean(&f1s),
        per_run,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub dimension_id: String,
    pub model_name: String,
    pub prompt_version: u32,
    pub binary: bool,
    /// Gold papers with a consolidated prediction.
    pub n_samples: usize,
    /// Gold papers without any successful run.
    pub unclassified: usize,
    pub accuracy_avg: Option<f64>,
    pub f1_avg: Option<f64>,
    pub self_consistency: Option<f64>,
    pub jaccard_mean: f64,
    pub lenient_accuracy: f64,
    pub micro: Prf,
    pub sample: Prf,
    pub per_run_detail: Vec<RunDetail>,
}

/// Every metric of one run set against a gold set. Only papers in the gold
/// set are evaluated.
pub fn evaluate(runs: &RunSet, gold: &GoldSet, dimension: &TaxonomyDimension) -> Result<MetricBundle, EvaluationError> {
    if gold.is_empty() {
        return Err(EvaluationError::EmptyGold);
    }
    let gold_labels = gold.labels();
    let mut sample = runs.clone();
    sample.targets.retain(|p| gold_labels.contains_key(p));
    sample.assignments.retain(|a| gold_labels.contains_key(&a.paper_id));
    if !sample.assignments.iter().any(|a| a.is_ok()) {
        return Err(EvaluationError::NoOkRuns);
    }
    let finals = consolidate(&sample, dimension)?;
    let pred = finals.labels;
    let binary = dimension.answer_mode == AnswerMode::Binary;
    let positive = binary.then(|| dimension.positive_label());
    let per_run = per_run_details(&sample, &gold_labels, positive);
    let accuracies: Vec<f64> = per_run.iter().filter_map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = per_run.iter().filter_map(|r| r.f1).collect();
    let consistency = if runs.repetitions >= 2 {
        self_consistency(&sample)?.rate
    } else {
        None
    };
    Ok(MetricBundle {
        dimension_id: runs.dimension_id.clone(),
        model_name: runs.model_name.clone(),
        prompt_version: runs.prompt_version,
        binary,
        n_samples: pred.len(),
        unclassified: gold_labels.len() - pred.len(),
        accuracy_avg: mean(&accuracies),
        f1_avg: mean(&f1s),
        self_consistency: consistency,
        jaccard_mean: jaccard_mean(&pred, &gold_labels)?,
        lenient_accuracy: lenient_accuracy(&pred, &gold_labels)?,
        micro: micro_prf(&pred, &gold_labels)?,
        sample: sample_prf(&pred, &gold_labels)?,
        per_run_detail: per_run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    AccuracyAvg,
    F1Avg,
    SelfConsistency,
    JaccardMean,
    LenientAccuracy,
    MicroF1,
    SampleF1,
}

impl SortKey {
    pub const ALL: [SortKey; 7] = [
        SortKey::AccuracyAvg,
        SortKey::F1Avg,
        SortKey::SelfConsistency,
        SortKey::JaccardMean,
        SortKey::LenientAccuracy,
        SortKey::MicroF1,
        SortKey::SampleF1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SortKey::AccuracyAvg => "accuracy_avg",
            SortKey::F1Avg => "f1_avg",
            SortKey::SelfConsistency => "self_consistency",
            SortKey::JaccardMean => "jaccard_mean",
            SortKey::LenientAccuracy => "lenient_accuracy",
            SortKey::MicroF1 => "micro_f1",
            SortKey::SampleF1 => "sample_f1",
        }
    }

    pub fn value(self, b: &MetricBundle) -> Option<f64> {
        match self {
            SortKey::AccuracyAvg => b.accuracy_avg,
            SortKey::F1Avg => b.f1_avg,
            SortKey::SelfConsistency => b.self_consistency,
            SortKey::JaccardMean => Some(b.jaccard_mean),
            SortKey::LenientAccuracy => Some(b.lenient_accuracy),
            SortKey::MicroF1 => b.micro.f1,
            SortKey::SampleF1 => b.sample.f1,
        }
    }
}

impl std::str::FromStr for SortKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SortKey::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sort key `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub first: String,
    pub second: String,
    /// Metric name to `first - second`, where both are defined.
    pub deltas: BTreeMap<String, f64>,
}

/// Bundles ranked by a key plus pairwise deltas. No winner is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dimension_id: String,
    pub sort_key: SortKey,
    pub rows: Vec<MetricBundle>,
    pub deltas: Vec<Delta>,
}

fn row_name(b: &MetricBundle) -> String {
    format!("{} v{}", b.model_name, b.prompt_version)
}

pub fn compare_models(bundles: &[MetricBundle], key: Option<SortKey>) -> Result<Comparison, EvaluationError> {
    let first = bundles.first().ok_or(EvaluationError::NoBundles)?;
    let dims: BTreeSet<&str> = bundles.iter().map(|b| b.dimension_id.as_str()).collect();
    if dims.len() > 1 {
        return Err(EvaluationError::MixedDimensions(dims.into_iter().map(String::from).collect()));
    }
    let key = key.unwrap_or(if first.binary { SortKey::F1Avg } else { SortKey::SampleF1 });
    let mut rows = bundles.to_vec();
    rows.sort_by(|a, b| {
        let (va, vb) = (key.value(a), key.value(b));
        vb.partial_cmp(&va)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (&a.model_name, a.prompt_version).cmp(&(&b.model_name, b.prompt_version)))
    });
    let mut deltas = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = SortKey::ALL
                .into_iter()
                .filter_map(|k| Some((k.name().to_string(), k.value(&rows[i])? - k.value(&rows[j])?)))
                .collect();
            deltas.push(Delta {
                first: row_name(&rows[i]),
                second: row_name(&rows[j]),
                deltas: d,
            });
        }
    }
    Ok(Comparison {
        dimension_id: first.dimension_id.clone(),
        sort_key: key,
        rows,
        deltas,
    })
}

const TABLE_COLUMNS: [&str; 14] = [
    "model",
    "prompt_version",
    "n",
    "accuracy_avg",
    "f1_avg",
    "self_consistency",
    "jaccard_mean",
    "lenient_accuracy",
    "micro_precision",
    "micro_recall",
    "micro_f1",
    "sample_precision",
    "sample_recall",
    "sample_f1",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

fn table_rows(bundles: &[MetricBundle]) -> Vec<Vec<String>> {
    bundles
        .iter()
        .map(|b| {
            vec![
                b.model_name.clone(),
                b.prompt_version.to_string(),
                b.n_samples.to_string(),
                cell(b.accuracy_avg),
                cell(b.f1_avg),
                cell(b.self_consistency),
                cell(Some(b.jaccard_mean)),
                cell(Some(b.lenient_accuracy)),
                cell(b.micro.precision),
                cell(b.micro.recall),
                cell(b.micro.f1),
                cell(b.sample.precision),
                cell(b.sample.recall),
                cell(b.sample.f1),
            ]
        })
        .collect()
}

/// One row per bundle, comma separated.
pub fn bundles_to_csv(bundles: &[MetricBundle]) -> String {
    let mut out = TABLE_COLUMNS.join(",");
    out.push('\n');
    for row in table_rows(bundles) {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One row per bundle, columns padded for reading.
pub fn bundles_to_text(bundles: &[MetricBundle]) -> String {
    let head: Vec<String> = TABLE_COLUMNS.iter().map(|c| c.to_string()).collect();
    let rows = table_rows(bundles);
    let widths: Vec<usize> = (0..head.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([head[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&head).chain(rows.iter()) {
        let line: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
