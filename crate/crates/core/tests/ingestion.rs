mod common;

use common::{clock, fixture};
use slr_core::citenet::{pagerank, resolve_references, PagerankParams};
use slr_core::corpus::{Corpus, FormatProfile, RejectionReason};
use slr_core::Clock;

fn ingest_20() -> (Corpus, slr_core::corpus::CorpusDelta) {
    let mut corpus = Corpus::new();
    let delta = corpus
        .ingest_export(&fixture("scopus_20.csv"), &FormatProfile::scopus_csv(), clock().now())
        .unwrap();
    (corpus, delta)
}

#[test]
fn twenty_rows_with_five_empty_abstracts() {
    let (corpus, delta) = ingest_20();
    assert_eq!(delta.added.len(), 15);
    assert_eq!(delta.rejected.len(), 5);
    assert!(delta.updated.is_empty());
    assert_eq!(delta.summary(), "added=15 updated=0 rejected=5 duplicates_merged=0");
    assert_eq!(delta.rows_accounted(), 20);
    assert_eq!(corpus.len(), 15);
    let rows: Vec<usize> = delta.rejected.iter().map(|(i, _)| *i).collect();
    assert_eq!(rows, [2, 6, 10, 14, 18]);
    assert!(delta.rejected.iter().all(|(_, r)| *r == RejectionReason::MissingAbstract));
}

#[test]
fn reingesting_the_same_file_changes_nothing() {
    let (mut corpus, _) = ingest_20();
    let before = corpus.clone();
    let again = corpus
        .merge_update(&fixture("scopus_20.csv"), &FormatProfile::scopus_csv(), clock().now())
        .unwrap();
    assert!(again.is_empty(), "{}", again.summary());
    assert_eq!(corpus, before);
}

#[test]
fn three_cycle_fixture_is_symmetric() {
    let mut corpus = Corpus::new();
    corpus
        .ingest_export(&fixture("three_cycle.csv"), &FormatProfile::scopus_csv(), clock().now())
        .unwrap();
    let graph = resolve_references(corpus.papers());
    assert_eq!(graph.edge_count(), 3);
    let scores = pagerank(&graph, PagerankParams::default()).unwrap();
    for s in scores.scores.values() {
        assert!((s - 1.0 / 3.0).abs() < 1e-9);
    }
}
