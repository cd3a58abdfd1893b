//! Oracle comparisons shared by the focused tests and the acceptance target.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slr_core::citenet::{betweenness_centrality, pagerank, PagerankParams};
use slr_core::classifier::{AssignmentStatus, LabelAssignment, RunSet};
use slr_core::evaluation::{jaccard_mean, lenient_accuracy, micro_prf, pooled_counts, sample_prf, self_consistency};
use slr_core::{Clock, FixedClock};

use super::oracle::{rational_to_f64, self_consistency_oracle, DenseGraph, LabelFixture};

pub const METRIC_FIXTURES: usize = 200;
pub const GRAPH_FIXTURES: usize = 100;

#[derive(Debug, Default, Clone, Copy)]
pub struct MetricErrors {
    pub micro: f64,
    pub sample: f64,
    pub jaccard: f64,
    pub lenient: f64,
    pub self_consistency: f64,
    /// Footnote form 2TP/(2TP+FP+FN) against the harmonic mean of P and R.
    pub footnote_vs_harmonic: f64,
}

impl MetricErrors {
    pub fn max(&self) -> f64 {
        [self.micro, self.sample, self.jaccard, self.lenient, self.self_consistency]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn worse(slot: &mut f64, got: Option<f64>, want: f64) {
    let err = got.map_or(f64::INFINITY, |g| (g - want).abs());
    *slot = slot.max(err);
}

fn random_run_set(rng: &mut ChaCha8Rng, papers: usize, labels: usize) -> (RunSet, Vec<Vec<u32>>) {
    let repetitions = rng.gen_range(2..=5u32);
    let mut set = RunSet::new("dim", "model", 1, repetitions);
    let at = FixedClock::ymd(2025, 1, 1).now();
    let mut masks = Vec::new();
    for i in 0..papers {
        let id = LabelFixture::paper(i);
        set.targets.push(id.clone());
        // Mostly stable papers so both outcomes occur often.
        let stable = rng.gen_bool(0.5);
        let first = rng.gen_range(1..(1u32 << labels));
        let runs: Vec<u32> = (0..repetitions)
            .map(|_| if stable { first } else { rng.gen_range(1..(1u32 << labels)) })
            .collect();
        for (r, &m) in runs.iter().enumerate() {
            set.assignments.push(LabelAssignment {
                paper_id: id.clone(),
                dimension_id: "dim".into(),
                run_index: r as u32 + 1,
                labels: LabelFixture::label_set(m, labels),
                model_name: "model".into(),
                prompt_version: 1,
                produced_at: at,
                status: AssignmentStatus::Ok,
                detail: None,
            });
        }
        masks.push(runs);
    }
    (set, masks)
}

/// Largest absolute deviation of every metric from the oracle over
/// `fixtures` random fixtures with at most 50 papers and 7 labels.
pub fn metric_suite(seed: u64, fixtures: usize) -> MetricErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = MetricErrors::default();
    for _ in 0..fixtures {
        let fx = LabelFixture::random(&mut rng, 50, 7);
        let want = fx.oracle();
        let (pred, gold) = fx.maps();
        let micro = micro_prf(&pred, &gold).unwrap();
        worse(&mut e.micro, micro.precision, want.micro_precision);
        worse(&mut e.micro, micro.recall, want.micro_recall);
        worse(&mut e.micro, micro.f1, want.micro_f1_harmonic);
        let c = pooled_counts(&pred, &gold).unwrap();
        let footnote = 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64;
        worse(&mut e.footnote_vs_harmonic, Some(footnote), want.micro_f1_harmonic);
        let sample = sample_prf(&pred, &gold).unwrap();
        worse(&mut e.sample, sample.precision, want.sample_precision);
        worse(&mut e.sample, sample.recall, want.sample_recall);
        worse(&mut e.sample, sample.f1, want.sample_f1);
        worse(&mut e.jaccard, jaccard_mean(&pred, &gold).ok(), want.jaccard);
        worse(&mut e.lenient, lenient_accuracy(&pred, &gold).ok(), want.lenient);
        let (runs, masks) = random_run_set(&mut rng, fx.gold.len(), fx.labels);
        worse(
            &mut e.self_consistency,
            self_consistency(&runs).unwrap().rate,
            self_consistency_oracle(&masks),
        );
    }
    e
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GraphErrors {
    pub pagerank: f64,
    /// Largest |sum of scores - 1|.
    pub pagerank_mass: f64,
    /// Nodes whose betweenness differs from the exact value rounded to f64.
    pub betweenness_mismatches: usize,
    pub betweenness_max_error: f64,
    pub unconverged: usize,
}

/// Damping 0.85 and tolerance 1e-9 as in the defaults, with room for the
/// slowest-mixing graphs (periodic ones contract by only 0.85 per step).
pub fn oracle_pagerank_params() -> PagerankParams {
    PagerankParams {
        max_iterations: 1000,
        ..PagerankParams::default()
    }
}

pub fn graph_suite(seed: u64, fixtures: usize) -> GraphErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = GraphErrors::default();
    for _ in 0..fixtures {
        let dense = DenseGraph::random(&mut rng, 8);
        let graph = dense.to_citation_graph();
        let pr = pagerank(&graph, oracle_pagerank_params()).unwrap();
        if pr.converged != Some(true) {
            e.unconverged += 1;
        }
        let want = dense.pagerank(0.85);
        for (i, w) in want.iter().enumerate() {
            e.pagerank = e.pagerank.max((pr.scores[&DenseGraph::id(i)] - w).abs());
        }
        e.pagerank_mass = e.pagerank_mass.max((pr.scores.values().sum::<f64>() - 1.0).abs());
        let bc = betweenness_centrality(&graph);
        for (i, exact) in dense.betweenness().iter().enumerate() {
            let got = bc.scores[&DenseGraph::id(i)];
            let want = rational_to_f64(exact);
            if got != want {
                e.betweenness_mismatches += 1;
            }
            e.betweenness_max_error = e.betweenness_max_error.max((got - want).abs());
        }
    }
    e
}
