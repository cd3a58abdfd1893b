use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use slr_core::analytics::{
    cooccurrence_matrix, cumulative_cooccurrence_series, cumulative_cross_citation_series, label_frequency,
    CooccurrenceMatrix, FrequencyTable, TemporalSeries, DEFAULT_MIN_COMBINATION_COUNT,
};
use slr_core::citenet::{centrality as score, induce_category_subgraph, top_k, Measure, RankedPaper};
use slr_core::classifier::{FinalLabels, RunSet};
use slr_core::evaluation::{compare_models, evaluate, Comparison, GoldLabelSet, GoldSet, SortKey};
use slr_core::llm::{Gateway, MockProvider, ProviderConfig};
use slr_core::store::{LabelConstraint, LabelMode, QueryFilter, QueryPage};
use slr_core::taxonomy::{AnswerMode, DimensionEntry, PromptTemplate, TaxonomyDimension, TaxonomyRegistry};
use slr_core::workspace::MAIN_ID;
use slr_core::{LabelSet, PaperId};

use crate::error::ApiError;
use crate::jobs::{CancelOutcome, JobSpec, JobView};
use crate::AppState;

type ApiResult<T> = Result<Json<T>, ApiError>;

pub async fn healthz(State(state): State<AppState>) -> Response {
    match state.workspace.store().health() {
        Ok(()) => Json(json!({"status": "ok"})).into_response(),
        Err(e) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e.to_string()).into_response(),
    }
}

fn parse_int<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ApiError> {
    value
        .parse()
        .map_err(|_| ApiError::bad_request(format!("`{name}` must be an integer, got `{value}`")))
}

fn parse_constraint(value: &str, mode: LabelMode) -> Result<LabelConstraint, ApiError> {
    let (dimension_id, label) = value
        .split_once(':')
        .ok_or_else(|| ApiError::bad_request(format!("label filter `{value}` must look like dimension:label")))?;
    Ok(LabelConstraint {
        dimension_id: dimension_id.into(),
        label: label.into(),
        mode,
    })
}

/// `label` and `exclude` repeat, each as `dimension:label`.
fn filter_from_pairs(pairs: &[(String, String)]) -> Result<QueryFilter, ApiError> {
    let mut filter = QueryFilter::default();
    for (k, v) in pairs {
        match k.as_str() {
            "year_from" => filter.year_from = Some(parse_int(k, v)?),
            "year_to" => filter.year_to = Some(parse_int(k, v)?),
            "keyword" => filter.keyword = Some(v.clone()),
            "limit" => filter.limit = parse_int(k, v)?,
            "offset" => filter.offset = parse_int(k, v)?,
            "label" => filter.constraints.push(parse_constraint(v, LabelMode::Include)?),
            "exclude" => filter.constraints.push(parse_constraint(v, LabelMode::Exclude)?),
            other => return Err(ApiError::bad_request(format!("unknown query parameter `{other}`"))),
        }
    }
    Ok(filter)
}

pub async fn papers(State(state): State<AppState>, Query(pairs): Query<Vec<(String, String)>>) -> ApiResult<QueryPage> {
    let filter = filter_from_pairs(&pairs)?;
    let registry = state.workspace.registry()?;
    for c in &filter.constraints {
        if !registry.get(&c.dimension_id)?.knows_label(&c.label) {
            return Err(ApiError::not_found(
                "unknown_label",
                format!("`{}` is not a label of `{}`", c.label, c.dimension_id),
            ));
        }
    }
    Ok(Json(state.workspace.store().query_papers(MAIN_ID, &filter)?))
}

pub async fn taxonomy_all(State(state): State<AppState>) -> ApiResult<Vec<DimensionEntry>> {
    let registry = state.workspace.registry()?;
    let entries = registry
        .dimensions()
        .map(|d| registry.entry(&d.dimension_id).cloned())
        .collect::<Result<_, _>>()?;
    Ok(Json(entries))
}

pub async fn taxonomy_get(State(state): State<AppState>, Path(dim): Path<String>) -> ApiResult<DimensionEntry> {
    let registry = state.workspace.registry()?;
    Ok(Json(registry.entry(&dim)?.clone()))
}

pub async fn taxonomy_put(
    State(state): State<AppState>,
    Path(dim): Path<String>,
    Json(dimension): Json<TaxonomyDimension>,
) -> ApiResult<DimensionEntry> {
    if dimension.dimension_id != dim {
        return Err(ApiError::bad_request(format!(
            "body is for `{}` but the path names `{dim}`",
            dimension.dimension_id
        )));
    }
    let mut registry = state.workspace.registry()?;
    registry.replace_dimension(dimension)?;
    state.workspace.save_registry(&registry, state.clock.as_ref())?;
    Ok(Json(registry.entry(&dim)?.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintsEdit {
    pub constraints: Vec<String>,
    pub editor: String,
}

pub async fn edit_constraints(
    State(state): State<AppState>,
    Path(dim): Path<String>,
    Json(edit): Json<ConstraintsEdit>,
) -> Result<(StatusCode, Json<PromptTemplate>), ApiError> {
    let mut registry: TaxonomyRegistry = state.workspace.registry()?;
    let template = registry
        .edit_constraints(&dim, edit.constraints, &edit.editor, state.clock.now())?
        .clone();
    state.workspace.save_registry(&registry, state.clock.as_ref())?;
    Ok((StatusCode::CREATED, Json(template)))
}

pub async fn gold_get(State(state): State<AppState>, Path(dim): Path<String>) -> ApiResult<GoldSet> {
    state.workspace.registry()?.get(&dim)?;
    Ok(Json(state.workspace.gold(&dim)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub paper_id: PaperId,
    pub labels: LabelSet,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldUpload {
    pub records: Vec<GoldEntry>,
}

pub async fn gold_post(
    State(state): State<AppState>,
    Path(dim): Path<String>,
    Json(upload): Json<GoldUpload>,
) -> Result<Response, ApiError> {
    let registry = state.workspace.registry()?;
    let dimension = registry.get(&dim)?;
    let corpus = state.workspace.corpus()?;
    let mut gold = state.workspace.gold(&dim)?;
    let (mut added, mut replaced) = (0, 0);
    for entry in upload.records {
        if corpus.get(entry.paper_id.as_str()).is_none() {
            return Err(ApiError::not_found(
                "unknown_paper",
                format!("paper `{}` is not in the corpus", entry.paper_id),
            ));
        }
        let record = GoldLabelSet {
            paper_id: entry.paper_id,
            dimension_id: dim.clone(),
            labels: entry.labels,
            annotator: entry.annotator,
            annotated_at: state.clock.now(),
        };
        match gold.insert(record, dimension)? {
            Some(_) => replaced += 1,
            None => added += 1,
        }
    }
    state.workspace.save_gold(&gold, state.clock.as_ref())?;
    let body = json!({"dimension_id": dim, "added": added, "replaced": replaced, "total": gold.len()});
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

pub async fn submit_job(State(state): State<AppState>, Json(spec): Json<JobSpec>) -> Result<Response, ApiError> {
    let registry = state.workspace.registry()?;
    let text_mapped = registry.get(&spec.dimension_id)?.answer_mode == AnswerMode::TextMapped;
    let gateway = match state.gateways.get(&spec.model) {
        Some(g) => g.clone(),
        // Keyword mapping never calls the gateway.
        None if text_mapped => Arc::new(Gateway::new(
            ProviderConfig::mock(&spec.model),
            Arc::new(MockProvider::from_entries([])),
        )),
        None => {
            return Err(ApiError::not_found(
                "unknown_model",
                format!("no provider is configured for model `{}`", spec.model),
            ))
        }
    };
    let (view, created) = state
        .jobs
        .submit(state.workspace.clone(), gateway, state.clock.clone(), spec)?;
    let status = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(view)).into_response())
}

fn unknown_job(id: &str) -> ApiError {
    ApiError::not_found("unknown_job", format!("no job `{id}`"))
}

pub async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<JobView> {
    state.jobs.get(&id).map(Json).ok_or_else(|| unknown_job(&id))
}

pub async fn cancel_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<CancelOutcome> {
    state.jobs.cancel(&id).map(Json).ok_or_else(|| unknown_job(&id))
}

/// Assignments persisted for a job's run set, including partial ones.
pub async fn job_assignments(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<RunSet> {
    if state.jobs.get(&id).is_none() {
        return Err(unknown_job(&id));
    }
    state
        .workspace
        .run_set(&id)?
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no_run_set", format!("job `{id}` has not stored any assignment yet")))
}

#[derive(Debug, Deserialize)]
pub struct EvaluationQuery {
    model: Option<String>,
    sort: Option<String>,
}

/// Every run set of the dimension scored against its gold set.
pub async fn evaluations(
    State(state): State<AppState>,
    Path(dim): Path<String>,
    Query(q): Query<EvaluationQuery>,
) -> ApiResult<Comparison> {
    let registry = state.workspace.registry()?;
    let dimension = registry.get(&dim)?;
    let sort = q
        .sort
        .as_deref()
        .map(str::parse::<SortKey>)
        .transpose()
        .map_err(ApiError::bad_request)?;
    let gold = state.workspace.gold(&dim)?;
    let mut bundles = Vec::new();
    for runs in state.workspace.run_sets(&dim)? {
        if q.model.as_ref().is_some_and(|m| &runs.model_name != m) {
            continue;
        }
        bundles.push(evaluate(&runs, &gold, dimension)?);
    }
    if bundles.is_empty() {
        return Err(ApiError::not_found("no_run_set", format!("no run set to evaluate for `{dim}`")));
    }
    Ok(Json(compare_models(&bundles, sort)?))
}

#[derive(Debug, Deserialize)]
pub struct CentralityQuery {
    measure: Option<String>,
    dimension: Option<String>,
    label: Option<String>,
    k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityView {
    pub measure: Measure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub node_count: usize,
    pub edge_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub ranked: Vec<RankedPaper>,
}

pub async fn centrality(State(state): State<AppState>, Query(q): Query<CentralityQuery>) -> ApiResult<CentralityView> {
    let measure: Measure = q
        .measure
        .as_deref()
        .unwrap_or("pagerank")
        .parse()
        .map_err(ApiError::bad_request)?;
    let graph = state.workspace.graph()?;
    let graph = match (&q.dimension, &q.label) {
        (Some(d), Some(l)) => induce_category_subgraph(&graph, d, l)?,
        (None, None) => graph,
        _ => return Err(ApiError::bad_request("`dimension` and `label` go together")),
    };
    let scores = score(&graph, measure)?;
    let ranked = top_k(&scores, &graph, q.k.unwrap_or(10))?;
    Ok(Json(CentralityView {
        measure,
        dimension: q.dimension,
        label: q.label,
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        iterations: scores.iterations,
        converged: scores.converged,
        ranked,
    }))
}

fn finals_of(state: &AppState, dim: &str) -> Result<FinalLabels, ApiError> {
    state
        .workspace
        .finals(dim)?
        .ok_or_else(|| ApiError::not_found("no_finals", format!("`{dim}` has no consolidated labels yet")))
}

#[derive(Debug, Deserialize)]
pub struct FrequencyQuery {
    min_count: Option<usize>,
}

pub async fn frequency(
    State(state): State<AppState>,
    Path(dim): Path<String>,
    Query(q): Query<FrequencyQuery>,
) -> ApiResult<FrequencyTable> {
    let registry = state.workspace.registry()?;
    let dimension = registry.get(&dim)?;
    let finals = finals_of(&state, &dim)?;
    let min = q.min_count.unwrap_or(DEFAULT_MIN_COMBINATION_COUNT);
    Ok(Json(label_frequency(&finals, dimension, min)?))
}

#[derive(Debug, Deserialize)]
pub struct AnalyticsQuery {
    dimension: Option<String>,
    kind: Option<String>,
}

/// The named dimension, or the only subclass-indexed one.
fn class_dimension(registry: &TaxonomyRegistry, requested: Option<&str>) -> Result<TaxonomyDimension, ApiError> {
    if let Some(d) = requested {
        return Ok(registry.get(d)?.clone());
    }
    let mut indexed = registry
        .dimensions()
        .filter(|d| d.answer_mode == AnswerMode::SubclassIndexed);
    match (indexed.next(), indexed.next()) {
        (Some(d), None) => Ok(d.clone()),
        _ => Err(ApiError::bad_request("name the dimension with `dimension=`")),
    }
}

pub async fn chord(State(state): State<AppState>, Query(q): Query<AnalyticsQuery>) -> ApiResult<CooccurrenceMatrix> {
    let registry = state.workspace.registry()?;
    let dimension = class_dimension(&registry, q.dimension.as_deref())?;
    let finals = finals_of(&state, &dimension.dimension_id)?;
    Ok(Json(cooccurrence_matrix(&finals, &dimension)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionView {
    pub kind: String,
    pub dimension_id: String,
    pub series: Vec<TemporalSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_edges: Option<usize>,
}

pub async fn evolution(State(state): State<AppState>, Query(q): Query<AnalyticsQuery>) -> ApiResult<EvolutionView> {
    let registry = state.workspace.registry()?;
    let dimension = class_dimension(&registry, q.dimension.as_deref())?;
    let finals = finals_of(&state, &dimension.dimension_id)?;
    let kind = q.kind.unwrap_or_else(|| "cooccurrence".into());
    let (series, skipped_edges) = match kind.as_str() {
        "cooccurrence" => {
            let years: BTreeMap<PaperId, i32> = state
                .workspace
                .corpus()?
                .papers()
                .map(|p| (p.paper_id.clone(), p.year))
                .collect();
            (cumulative_cooccurrence_series(&finals, &dimension, &years)?, None)
        }
        "citation" => {
            let graph = state.workspace.graph()?;
            let cites = cumulative_cross_citation_series(&graph, &finals, &dimension)?;
            (cites.series, Some(cites.skipped_edges))
        }
        other => {
            return Err(ApiError::bad_request(format!(
                "unknown kind `{other}`; use cooccurrence or citation"
            )))
        }
    };
    Ok(Json(EvolutionView {
        kind,
        dimension_id: dimension.dimension_id,
        series,
        skipped_edges,
    }))
}
