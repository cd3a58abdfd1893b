//! One-shot batch run over a corpus: classify every dimension, consolidate,
//! apply gates, then produce analytics, centralities and evaluation tables.
//!
//! Every artifact is rendered to text so two runs can be compared byte for byte.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::analytics::{
    cooccurrence_matrix, cumulative_cooccurrence_series, cumulative_cross_citation_series, label_frequency,
    occurrence_proportions, series_to_csv, AnalyticsError, DEFAULT_MIN_COMBINATION_COUNT,
};
use crate::citenet::{
    centrality, induce_category_subgraph, ranking_csv, resolve_references, top_k, CitationGraph, CitenetError, Measure,
};
use crate::classifier::{consolidate, gate_positive, run_dimension, ClassifierError, FinalLabels, GateResult, RunOptions, RunSet};
use crate::corpus::{Corpus, PaperRecord};
use crate::evaluation::{bundles_to_csv, evaluate, EvaluationError, GoldLabelSet, GoldSet, MetricBundle};
use crate::llm::Gateway;
use crate::taxonomy::{AnswerMode, TaxonomyError, TaxonomyRegistry};
use crate::{Clock, PaperId};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Citenet(#[from] CitenetError),
    #[error("dimension `{0}` depends on itself through its gates")]
    GateCycle(String),
}

pub struct PipelineConfig<'a> {
    pub repetitions: u32,
    pub clock: &'a dyn Clock,
    /// Smallest count at which a label combination is listed on its own row.
    pub min_combination_count: usize,
}

impl<'a> PipelineConfig<'a> {
    pub fn new(repetitions: u32, clock: &'a dyn Clock) -> Self {
        Self {
            repetitions,
            clock,
            min_combination_count: DEFAULT_MIN_COMBINATION_COUNT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub run_sets: BTreeMap<String, RunSet>,
    pub finals: BTreeMap<String, FinalLabels>,
    /// Keyed by gate dimension.
    pub gates: BTreeMap<String, GateResult>,
    pub graph: CitationGraph,
    pub bundles: BTreeMap<String, MetricBundle>,
    /// File name to contents.
    pub artifacts: BTreeMap<String, String>,
}

/// Dimensions ordered so every gate precedes the dimensions depending on it.
fn gate_order(registry: &TaxonomyRegistry) -> Result<Vec<String>, PipelineError> {
    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut order = Vec::new();
    let all: Vec<_> = registry.dimensions().collect();
    while order.len() < all.len() {
        let before = order.len();
        for d in &all {
            if done.contains(&d.dimension_id) {
                continue;
            }
            if d.depends_on.as_ref().is_none_or(|g| done.contains(g)) {
                done.insert(d.dimension_id.clone());
                order.push(d.dimension_id.clone());
            }
        }
        if order.len() == before {
            let stuck = all.iter().find(|d| !done.contains(&d.dimension_id)).expect("some dimension left");
            return Err(PipelineError::GateCycle(stuck.dimension_id.clone()));
        }
    }
    Ok(order)
}

pub fn run_pipeline(
    corpus: &Corpus,
    registry: &TaxonomyRegistry,
    gateway: &Gateway,
    gold: &[GoldLabelSet],
    config: &PipelineConfig<'_>,
) -> Result<PipelineReport, PipelineError> {
    let papers: Vec<&PaperRecord> = corpus.papers().collect();
    let all_ids: Vec<PaperId> = papers.iter().map(|p| p.paper_id.clone()).collect();
    let mut run_sets = BTreeMap::new();
    let mut finals = BTreeMap::new();
    let mut gates: BTreeMap<String, GateResult> = BTreeMap::new();

    for dim_id in gate_order(registry)? {
        let dim = registry.get(&dim_id)?;
        let gate = match &dim.depends_on {
            Some(g) => {
                if !gates.contains_key(g) {
                    gates.insert(g.clone(), gate_positive(&all_ids, &finals[g], registry.get(g)?));
                }
                Some(&gates[g].positive)
            }
            None => None,
        };
        let targets: Vec<&PaperRecord> = match gate {
            Some(g) => papers.iter().copied().filter(|p| g.contains(&p.paper_id)).collect(),
            None => papers.clone(),
        };
        let mut options = RunOptions::new(config.repetitions, config.clock);
        options.gate = gate;
        let runs = run_dimension(&targets, dim, gateway, &options, None)?;
        finals.insert(dim_id.clone(), consolidate(&runs, dim)?);
        run_sets.insert(dim_id, runs);
    }

    let mut gold_sets: BTreeMap<String, GoldSet> = BTreeMap::new();
    for record in gold {
        let dim = registry.get(&record.dimension_id)?;
        gold_sets
            .entry(record.dimension_id.clone())
            .or_insert_with(|| GoldSet::new(&record.dimension_id))
            .insert(record.clone(), dim)?;
    }
    let state = ReviewState {
        corpus,
        registry,
        run_sets: &run_sets,
        finals: &finals,
        gold: &gold_sets,
    };
    let rendered = render_artifacts(&state, config.min_combination_count)?;
    Ok(PipelineReport {
        run_sets,
        finals,
        gates: rendered.gates,
        graph: rendered.graph,
        bundles: rendered.bundles,
        artifacts: rendered.artifacts,
    })
}

/// Everything the artifact tables are computed from. Run sets and gold sets
/// are keyed by dimension.
pub struct ReviewState<'a> {
    pub corpus: &'a Corpus,
    pub registry: &'a TaxonomyRegistry,
    pub run_sets: &'a BTreeMap<String, RunSet>,
    pub finals: &'a BTreeMap<String, FinalLabels>,
    pub gold: &'a BTreeMap<String, GoldSet>,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub gates: BTreeMap<String, GateResult>,
    pub graph: CitationGraph,
    pub bundles: BTreeMap<String, MetricBundle>,
    pub artifacts: BTreeMap<String, String>,
}

/// Renders finals, gates, graph, centralities, analytics and evaluations.
/// Dimensions without finals are skipped, as are gates whose gate dimension
/// has none.
pub fn render_artifacts(state: &ReviewState<'_>, min_combination_count: usize) -> Result<Rendered, PipelineError> {
    let registry = state.registry;
    let papers: Vec<&PaperRecord> = state.corpus.papers().collect();
    let all_ids: Vec<PaperId> = papers.iter().map(|p| p.paper_id.clone()).collect();
    let mut artifacts = BTreeMap::new();
    let mut gates = BTreeMap::new();

    for (dim_id, finals) in state.finals {
        artifacts.insert(format!("finals_{dim_id}.csv"), finals.to_csv());
        if let Some(g) = &registry.get(dim_id)?.depends_on {
            if let (Some(gate_finals), false) = (state.finals.get(g), gates.contains_key(g)) {
                let result = gate_positive(&all_ids, gate_finals, registry.get(g)?);
                artifacts.insert(format!("gate_{g}.txt"), result.summary() + "\n");
                gates.insert(g.clone(), result);
            }
        }
    }

    let mut graph = resolve_references(papers.iter().copied());
    for (dim_id, finals) in state.finals {
        graph.attach_labels(registry.get(dim_id)?, finals);
    }
    artifacts.insert("graph_edges.csv".into(), graph.edge_list_csv());
    artifacts.insert("resolution.txt".into(), graph.resolution_stats.summary() + "\n");
    if graph.node_count() > 0 {
        for measure in [Measure::InDegree, Measure::Pagerank, Measure::Betweenness] {
            let scores = centrality(&graph, measure)?;
            let ranked = top_k(&scores, &graph, graph.node_count())?;
            artifacts.insert(format!("centrality_{}.csv", measure.name()), ranking_csv(&ranked));
        }
    }
    for gate_id in gates.keys() {
        let label = registry.get(gate_id)?.positive_label().to_string();
        let sub = induce_category_subgraph(&graph, gate_id, &label)?;
        if sub.node_count() == 0 {
            continue;
        }
        let scores = centrality(&sub, Measure::Pagerank)?;
        let ranked = top_k(&scores, &sub, sub.node_count())?;
        artifacts.insert(format!("centrality_pagerank_{gate_id}.csv"), ranking_csv(&ranked));
    }

    let years: BTreeMap<PaperId, i32> = papers.iter().map(|p| (p.paper_id.clone(), p.year)).collect();
    for (dim_id, finals) in state.finals {
        let dim = registry.get(dim_id)?;
        match dim.answer_mode {
            AnswerMode::LabeledMulti => {
                let table = label_frequency(finals, dim, min_combination_count)?;
                artifacts.insert(format!("frequency_{dim_id}.csv"), table.to_csv());
            }
            AnswerMode::SubclassIndexed => {
                let a = &mut artifacts;
                a.insert(format!("occurrence_{dim_id}.csv"), occurrence_proportions(finals, dim)?.to_csv());
                a.insert(format!("chord_{dim_id}.csv"), cooccurrence_matrix(finals, dim)?.to_csv());
                let co = cumulative_cooccurrence_series(finals, dim, &years)?;
                a.insert(format!("cooccurrence_series_{dim_id}.csv"), series_to_csv(&co, false));
                let cites = cumulative_cross_citation_series(&graph, finals, dim)?;
                a.insert(format!("citation_series_{dim_id}.csv"), series_to_csv(&cites.series, true));
                a.insert(
                    format!("citation_series_skipped_{dim_id}.txt"),
                    format!("skipped_edges={}\n", cites.skipped_edges),
                );
            }
            AnswerMode::Binary | AnswerMode::TextMapped => {}
        }
    }

    let mut bundles = BTreeMap::new();
    for (dim_id, gold_set) in state.gold {
        let Some(runs) = state.run_sets.get(dim_id) else { continue };
        if gold_set.is_empty() {
            continue;
        }
        let bundle = evaluate(runs, gold_set, registry.get(dim_id)?)?;
        artifacts.insert(format!("evaluation_{dim_id}.csv"), bundles_to_csv(std::slice::from_ref(&bundle)));
        bundles.insert(dim_id.clone(), bundle);
    }
    Ok(Rendered {
        gates,
        graph,
        bundles,
        artifacts,
    })
}
