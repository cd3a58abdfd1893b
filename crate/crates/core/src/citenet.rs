//! In-corpus citation graph: reference resolution, category subgraphs and
//! centralities.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::FinalLabels;
use crate::corpus::{normalize_title, PaperRecord};
use crate::taxonomy::{label_matches, TaxonomyDimension};
use crate::{LabelSet, PaperId};

mod dd;
use dd::Dd;

/// Titles with at least this many words match on containment alone.
pub const LONG_TITLE_WORDS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CitenetError {
    #[error("no labels attached for dimension `{0}`")]
    UnknownDimension(String),
    #[error("label `{label}` is not in the vocabulary of `{dimension}`")]
    UnknownLabel { dimension: String, label: String },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeAttrs {
    pub year: i32,
    /// Final labels per dimension, where available.
    #[serde(default)]
    pub labels: BTreeMap<String, LabelSet>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionStats {
    pub references_total: usize,
    pub resolved: usize,
    pub ambiguous: usize,
    pub unresolved: usize,
}

impl ResolutionStats {
    pub fn summary(&self) -> String {
        format!(
            "references_total={} resolved={} ambiguous={} unresolved={}",
            self.references_total, self.resolved, self.ambiguous, self.unresolved
        )
    }
}

/// Labels a dimension may carry; class numbers are valid queries for
/// subclass-indexed dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub labels: BTreeSet<String>,
    pub classes: BTreeSet<u8>,
}

impl Vocabulary {
    pub fn of(dimension: &TaxonomyDimension) -> Self {
        Self {
            labels: dimension.label_names().map(String::from).collect(),
            classes: dimension.labels.iter().filter_map(|l| l.parent_class).collect(),
        }
    }

    pub fn knows(&self, query: &str) -> bool {
        self.labels.contains(query) || query.parse::<u8>().is_ok_and(|c| self.classes.contains(&c))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CitationGraph {
    pub nodes: BTreeMap<PaperId, NodeAttrs>,
    /// Citing paper to cited paper.
    pub edges: BTreeSet<(PaperId, PaperId)>,
    pub resolution_stats: ResolutionStats,
    #[serde(default)]
    pub vocabularies: BTreeMap<String, Vocabulary>,
}

impl CitationGraph {
    pub fn add_node(&mut self, id: PaperId, year: i32) {
        self.nodes.entry(id).or_default().year = year;
    }

    /// Adds an edge between existing nodes. Self-loops and unknown endpoints
    /// are ignored; returns whether the edge is new.
    pub fn add_edge(&mut self, from: &PaperId, to: &PaperId) -> bool {
        if from == to || !self.nodes.contains_key(from) || !self.nodes.contains_key(to) {
            return false;
        }
        self.edges.insert((from.clone(), to.clone()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn year(&self, id: &PaperId) -> Option<i32> {
        self.nodes.get(id).map(|n| n.year)
    }

    /// Attaches consolidated labels of one dimension to matching nodes.
    pub fn attach_labels(&mut self, dimension: &TaxonomyDimension, finals: &FinalLabels) {
        self.vocabularies
            .insert(dimension.dimension_id.clone(), Vocabulary::of(dimension));
        for (id, labels) in &finals.labels {
            if let Some(node) = self.nodes.get_mut(id) {
                node.labels.insert(dimension.dimension_id.clone(), labels.clone());
            }
        }
    }

    pub fn labels(&self, id: &PaperId, dimension_id: &str) -> Option<&LabelSet> {
        self.nodes.get(id).and_then(|n| n.labels.get(dimension_id))
    }

    /// Edge list, one `citing_id,cited_id` pair per line.
    pub fn edge_list_csv(&self) -> String {
        let mut out = String::from("citing_id,cited_id\n");
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a},{b}");
        }
        out
    }

    /// Node attributes: id, year and one `;`-joined label column per dimension.
    pub fn node_attributes_csv(&self) -> String {
        let dims: Vec<&String> = self.vocabularies.keys().collect();
        let mut out = String::from("paper_id,year");
        for d in &dims {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (id, node) in &self.nodes {
            let _ = write!(out, "{id},{}", node.year);
            for d in &dims {
                let joined = node
                    .labels
                    .get(*d)
                    .map(|l| l.iter().cloned().collect::<Vec<_>>().join(";"))
                    .unwrap_or_default();
                let _ = write!(out, ",{}", csv_field(&joined));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn doi_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"10\.\d{4,9}/[^\s,;]+").expect("valid pattern"))
}

fn year_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(1[89]\d\d|20\d\d)\b").expect("valid pattern"))
}

/// DOIs mentioned in a reference string, lowercased, without trailing punctuation.
pub fn extract_dois(reference: &str) -> Vec<String> {
    doi_pattern()
        .find_iter(reference)
        .map(|m| m.as_str().trim_end_matches(['.', ')', ']']).to_lowercase())
        .collect()
}

pub fn extract_years(reference: &str) -> Vec<i32> {
    year_pattern()
        .find_iter(reference)
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

struct TitleEntry {
    id: PaperId,
    title: String,
    words: usize,
    year: i32,
}

enum Resolution {
    Resolved(PaperId),
    Ambiguous,
    Unresolved,
}

struct Resolver {
    by_doi: HashMap<String, Vec<PaperId>>,
    titles: Vec<TitleEntry>,
    /// First two title words to entries starting with them.
    by_prefix: HashMap<String, Vec<usize>>,
}

impl Resolver {
    fn new<'a>(papers: impl IntoIterator<Item = &'a PaperRecord>) -> Self {
        let mut by_doi: HashMap<String, Vec<PaperId>> = HashMap::new();
        let mut titles = Vec::new();
        let mut by_prefix: HashMap<String, Vec<usize>> = HashMap::new();
        for p in papers {
            if let Some(doi) = &p.doi {
                by_doi.entry(doi.to_lowercase()).or_default().push(p.paper_id.clone());
            }
            let title = normalize_title(&p.title);
            if title.is_empty() {
                continue;
            }
            let words: Vec<&str> = title.split(' ').collect();
            by_prefix.entry(prefix_key(&words)).or_default().push(titles.len());
            titles.push(TitleEntry {
                id: p.paper_id.clone(),
                words: words.len(),
                title,
                year: p.year,
            });
        }
        Self { by_doi, titles, by_prefix }
    }

    fn resolve(&self, citing: &PaperId, reference: &str) -> Resolution {
        for doi in extract_dois(reference) {
            if let Some(ids) = self.by_doi.get(&doi) {
                let ids: BTreeSet<&PaperId> = ids.iter().filter(|id| *id != citing).collect();
                match ids.len() {
                    0 => {}
                    1 => return Resolution::Resolved(ids.into_iter().next().expect("one").clone()),
                    _ => return Resolution::Ambiguous,
                }
            }
        }

        let normalized = normalize_title(reference);
        let padded = format!(" {normalized} ");
        let words: Vec<&str> = normalized.split(' ').collect();
        let years = extract_years(reference);
        let year_ok = |y: i32| years.iter().any(|r| (r - y).abs() <= 1);

        let mut seen = BTreeSet::new();
        let mut candidates: Vec<&TitleEntry> = Vec::new();
        for start in 0..words.len() {
            let key = prefix_key(&words[start..]);
            for &i in self.by_prefix.get(&key).into_iter().flatten() {
                let entry = &self.titles[i];
                if &entry.id == citing || !seen.insert(i) || !padded.contains(&format!(" {} ", entry.title)) {
                    continue;
                }
                let long = entry.words >= LONG_TITLE_WORDS;
                let accepted = if long {
                    years.is_empty() || year_ok(entry.year)
                } else {
                    year_ok(entry.year)
                };
                if accepted {
                    candidates.push(entry);
                }
            }
        }
        // A title that is part of a longer matched title is not a separate hit.
        let kept: BTreeSet<&PaperId> = candidates
            .iter()
            .filter(|c| {
                !candidates
                    .iter()
                    .any(|o| o.title.len() > c.title.len() && format!(" {} ", o.title).contains(&format!(" {} ", c.title)))
            })
            .map(|c| &c.id)
            .collect();
        match kept.len() {
            0 => Resolution::Unresolved,
            1 => Resolution::Resolved(kept.into_iter().next().expect("one").clone()),
            _ => Resolution::Ambiguous,
        }
    }
}

fn prefix_key(words: &[&str]) -> String {
    match words {
        [a, b, ..] => format!("{a} {b}"),
        [a] => a.to_string(),
        [] => String::new(),
    }
}

/// Builds the citation graph of a corpus. Each reference string is matched
/// first by an embedded DOI, then by normalized-title containment with a
/// publication-year check; matches naming two or more papers are dropped.
pub fn resolve_references<'a>(papers: impl IntoIterator<Item = &'a PaperRecord> + Clone) -> CitationGraph {
    let resolver = Resolver::new(papers.clone());
    let mut graph = CitationGraph::default();
    let papers: Vec<&PaperRecord> = papers.into_iter().collect();
    for p in &papers {
        graph.add_node(p.paper_id.clone(), p.year);
    }
    let mut stats = ResolutionStats::default();
    for p in &papers {
        for reference in &p.reference_strings {
            stats.references_total += 1;
            match resolver.resolve(&p.paper_id, reference) {
                Resolution::Resolved(target) => {
                    stats.resolved += 1;
                    graph.add_edge(&p.paper_id, &target);
                }
                Resolution::Ambiguous => stats.ambiguous += 1,
                Resolution::Unresolved => stats.unresolved += 1,
            }
        }
    }
    graph.resolution_stats = stats;
    graph
}

/// Keeps edges whose source carries `label` in `dimension_id`, with their
/// targets, and drops isolated nodes. A bare class number matches any of its
/// subclasses.
pub fn induce_category_subgraph(graph: &CitationGraph, dimension_id: &str, label: &str) -> Result<CitationGraph, CitenetError> {
    let vocab = graph
        .vocabularies
        .get(dimension_id)
        .ok_or_else(|| CitenetError::UnknownDimension(dimension_id.into()))?;
    if !vocab.knows(label) {
        return Err(CitenetError::UnknownLabel {
            dimension: dimension_id.into(),
            label: label.into(),
        });
    }
    let mut sub = CitationGraph {
        resolution_stats: graph.resolution_stats,
        vocabularies: graph.vocabularies.clone(),
        ..Default::default()
    };
    for (from, to) in &graph.edges {
        if graph.labels(from, dimension_id).is_some_and(|l| label_matches(l, label)) {
            for id in [from, to] {
                sub.nodes.insert(id.clone(), graph.nodes[id].clone());
            }
            sub.edges.insert((from.clone(), to.clone()));
        }
    }
    Ok(sub)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    InDegree,
    OutDegree,
    TotalDegree,
    Pagerank,
    Betweenness,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::InDegree => "in_degree",
            Measure::OutDegree => "out_degree",
            Measure::TotalDegree => "total_degree",
            Measure::Pagerank => "pagerank",
            Measure::Betweenness => "betweenness",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "in_degree" | "degree" => Measure::InDegree,
            "out_degree" => Measure::OutDegree,
            "total_degree" => Measure::TotalDegree,
            "pagerank" => Measure::Pagerank,
            "betweenness" => Measure::Betweenness,
            other => return Err(format!("unknown measure `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PagerankParams {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PagerankParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tolerance: 1e-9,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub measure: Measure,
    pub scores: BTreeMap<PaperId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<PagerankParams>,
    /// PageRank only: iterations run and whether the tolerance was reached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default)]
    pub normalized: bool,
}

impl CentralityScores {
    fn plain(measure: Measure, scores: BTreeMap<PaperId, f64>) -> Self {
        Self {
            measure,
            scores,
            parameters: None,
            iterations: None,
            converged: None,
            normalized: false,
        }
    }
}

/// Degree counts in the chosen direction, optionally divided by `n - 1`.
pub fn degree_centrality(graph: &CitationGraph, measure: Measure, normalized: bool) -> CentralityScores {
    let mut scores: BTreeMap<PaperId, f64> = graph.nodes.keys().map(|id| (id.clone(), 0.0)).collect();
    for (from, to) in &graph.edges {
        if matches!(measure, Measure::InDegree | Measure::TotalDegree) {
            *scores.get_mut(to).expect("edge endpoint") += 1.0;
        }
        if matches!(measure, Measure::OutDegree | Measure::TotalDegree) {
            *scores.get_mut(from).expect("edge endpoint") += 1.0;
        }
    }
    if normalized && graph.nodes.len() > 1 {
        let scale = (graph.nodes.len() - 1) as f64;
        scores.values_mut().for_each(|v| *v /= scale);
    }
    CentralityScores {
        normalized,
        ..CentralityScores::plain(measure, scores)
    }
}

pub fn in_degree_centrality(graph: &CitationGraph) -> CentralityScores {
    degree_centrality(graph, Measure::InDegree, false)
}

struct Indexed {
    ids: Vec<PaperId>,
    out: Vec<Vec<usize>>,
}

fn index(graph: &CitationGraph) -> Indexed {
    let ids: Vec<PaperId> = graph.nodes.keys().cloned().collect();
    let pos: HashMap<&PaperId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut out = vec![Vec::new(); ids.len()];
    for (from, to) in &graph.edges {
        out[pos[from]].push(pos[to]);
    }
    Indexed { ids, out }
}

/// Power iteration with uniform teleport; dangling mass is spread uniformly.
/// Stops once the L1 change falls below the tolerance or after
/// `max_iterations`, recording which.
pub fn pagerank(graph: &CitationGraph, params: PagerankParams) -> Result<CentralityScores, CitenetError> {
    let Indexed { ids, out } = index(graph);
    let n = ids.len();
    if n == 0 {
        return Err(CitenetError::EmptyGraph);
    }
    let d = params.damping;
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&u| out[u].is_empty()).map(|u| x[u]).sum();
        let base = (1.0 - d) * uniform + d * dangling * uniform;
        let mut next = vec![base; n];
        for u in 0..n {
            if out[u].is_empty() {
                continue;
            }
            let share = d * x[u] / out[u].len() as f64;
            for &v in &out[u] {
                next[v] += share;
            }
        }
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(CentralityScores {
        parameters: Some(params),
        iterations: Some(iterations),
        converged: Some(converged),
        ..CentralityScores::plain(Measure::Pagerank, ids.into_iter().zip(x).collect())
    })
}

/// Directed shortest-path betweenness by dependency accumulation from every
/// source. Endpoints are excluded and scores are not normalized. Sums are
/// carried in double-double precision, so each score is the exact value
/// rounded to the nearest `f64`.
pub fn betweenness_centrality(graph: &CitationGraph) -> CentralityScores {
    let Indexed { ids, out } = index(graph);
    let n = ids.len();
    let mut cb = vec![Dd::ZERO; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![Dd::ZERO; n];
        let mut dist = vec![usize::MAX; n];
        sigma[s] = Dd::ONE;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &out[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] = sigma[w] + sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![Dd::ZERO; n];
        while let Some(w) = stack.pop() {
            let coeff = (Dd::ONE + delta[w]) / sigma[w];
            for &v in &preds[w] {
                delta[v] = delta[v] + sigma[v] * coeff;
            }
            if w != s {
                cb[w] = cb[w] + delta[w];
            }
        }
    }
    let scores = ids.into_iter().zip(cb.into_iter().map(Dd::to_f64)).collect();
    CentralityScores::plain(Measure::Betweenness, scores)
}

pub fn centrality(graph: &CitationGraph, measure: Measure) -> Result<CentralityScores, CitenetError> {
    match measure {
        Measure::Pagerank => pagerank(graph, PagerankParams::default()),
        Measure::Betweenness => Ok(betweenness_centrality(graph)),
        degree => Ok(degree_centrality(graph, degree, false)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPaper {
    pub paper_id: PaperId,
    pub score: f64,
    pub year: Option<i32>,
}

/// Highest scores first; ties go to the older paper, then the smaller id.
pub fn top_k(scores: &CentralityScores, graph: &CitationGraph, k: usize) -> Result<Vec<RankedPaper>, CitenetError> {
    if k == 0 {
        return Err(CitenetError::ZeroK);
    }
    let mut ranked: Vec<RankedPaper> = scores
        .scores
        .iter()
        .map(|(id, &score)| RankedPaper {
            paper_id: id.clone(),
            score,
            year: graph.year(id),
        })
        .collect();
    // Scores equal to 12 decimals count as tied.
    let key = |s: f64| (s * 1e12).round();
    ranked.sort_by(|a, b| {
        key(b.score)
            .total_cmp(&key(a.score))
            .then_with(|| a.year.unwrap_or(i32::MAX).cmp(&b.year.unwrap_or(i32::MAX)))
            .then_with(|| a.paper_id.cmp(&b.paper_id))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// `paper_id,score` rows in ranking order.
pub fn ranking_csv(ranked: &[RankedPaper]) -> String {
    let mut out = String::from("paper_id,score\n");
    for r in ranked {
        let _ = writeln!(out, "{},{:.6}", r.paper_id, r.score);
    }
    out
}
