//! In-page demo. The exported functions take plain text (what a user pastes
//! into a textarea) and return JSON for the page script to draw.
//!
//! Build for the browser with
//! `wasm-pack build --target web --out-dir www/pkg crates/wasm`.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use slr_core::citenet::{centrality, top_k, CitationGraph, Measure};
use slr_core::evaluation::{jaccard_mean, lenient_accuracy, micro_prf, pooled_counts, sample_prf, LabelMap};
use slr_core::{LabelSet, PaperId};

/// Centrality ranking of a pasted edge list.
///
/// One edge per line as `citing,cited`. A line with a single id adds a node
/// with no edges; `id@year` sets a year, which breaks score ties.
#[wasm_bindgen(js_name = rankCitations)]
pub fn rank_citations_js(edges: &str, measure: &str, k: usize) -> Result<String, JsError> {
    rank_citations(edges, measure, k).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Set-based scores of predicted against gold labels.
///
/// One paper per line as `paper_id | gold labels | predicted labels`, labels
/// separated by `;`.
#[wasm_bindgen(js_name = scoreLabels)]
pub fn score_labels_js(rows: &str) -> Result<String, JsError> {
    score_labels(rows).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

fn node(graph: &mut CitationGraph, token: &str) -> Result<PaperId, String> {
    let (id, year) = match token.split_once('@') {
        Some((id, year)) => (id.trim(), year.trim().parse::<i32>().map_err(|_| format!("bad year in `{token}`"))?),
        None => (token.trim(), 0),
    };
    if id.is_empty() {
        return Err("empty paper id".into());
    }
    let id = PaperId::new(id);
    if year != 0 || !graph.nodes.contains_key(&id) {
        graph.add_node(id.clone(), year);
    }
    Ok(id)
}

pub fn parse_edges(text: &str) -> Result<CitationGraph, String> {
    let mut graph = CitationGraph::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match fields.as_slice() {
            [one] => {
                node(&mut graph, one)?;
            }
            [from, to] => {
                let from = node(&mut graph, from)?;
                let to = node(&mut graph, to)?;
                graph.add_edge(&from, &to);
            }
            _ => return Err(format!("line {}: expected `citing,cited`", n + 1)),
        }
    }
    Ok(graph)
}

pub fn rank_citations(edges: &str, measure: &str, k: usize) -> Result<Value, String> {
    let measure: Measure = measure.parse()?;
    let graph = parse_edges(edges)?;
    if graph.node_count() == 0 {
        return Err("no papers in the edge list".into());
    }
    let scores = centrality(&graph, measure).map_err(|e| e.to_string())?;
    let ranked = top_k(&scores, &graph, k).map_err(|e| e.to_string())?;
    Ok(json!({
        "measure": measure.name(),
        "nodes": graph.node_count(),
        "edges": graph.edge_count(),
        "iterations": scores.iterations,
        "converged": scores.converged,
        "ranked": ranked.iter().map(|r| json!({"paper_id": r.paper_id, "score": r.score})).collect::<Vec<_>>(),
    }))
}

fn label_set(field: &str) -> LabelSet {
    field.split(';').map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect()
}

pub fn score_labels(rows: &str) -> Result<Value, String> {
    let mut gold = LabelMap::new();
    let mut pred: LabelMap = BTreeMap::new();
    for (n, line) in rows.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let [id, g, p] = line.split('|').collect::<Vec<_>>()[..] else {
            return Err(format!("line {}: expected `paper_id | gold | predicted`", n + 1));
        };
        let id = PaperId::new(id.trim());
        if gold.insert(id.clone(), label_set(g)).is_some() {
            return Err(format!("line {}: paper `{id}` listed twice", n + 1));
        }
        pred.insert(id, label_set(p));
    }
    let err = |e: slr_core::evaluation::EvaluationError| e.to_string();
    Ok(json!({
        "papers": pred.len(),
        "jaccard": jaccard_mean(&pred, &gold).map_err(err)?,
        "lenient_accuracy": lenient_accuracy(&pred, &gold).map_err(err)?,
        "counts": pooled_counts(&pred, &gold).map_err(err)?,
        "micro": micro_prf(&pred, &gold).map_err(err)?,
        "sample": sample_prf(&pred, &gold).map_err(err)?,
    }))
}
