mod common;

use common::checks::{graph_suite, metric_suite, GRAPH_FIXTURES, METRIC_FIXTURES};

#[test]
fn metrics_match_set_enumeration() {
    for seed in [7, 8, 9] {
        let e = metric_suite(seed, METRIC_FIXTURES);
        println!("seed {seed}: {e:?}");
        assert!(e.max() <= 1e-12, "{e:?}");
        assert!(e.footnote_vs_harmonic <= 1e-12, "{e:?}");
    }
}

#[test]
fn centralities_match_dense_and_exact_oracles() {
    for seed in [11, 12, 13] {
        let e = graph_suite(seed, GRAPH_FIXTURES);
        println!("seed {seed}: {e:?}");
        assert!(e.pagerank <= 1e-8, "{e:?}");
        assert!(e.pagerank_mass <= 1e-6, "{e:?}");
        assert_eq!(e.betweenness_mismatches, 0, "{e:?}");
        assert_eq!(e.unconverged, 0, "{e:?}");
    }
}

#[test]
fn default_iteration_cap_is_reported_when_hit() {
    use common::oracle::DenseGraph;
    use slr_core::citenet::{pagerank, PagerankParams};
    // A directed 8-cycle has a periodic walk; the residual shrinks by d each step.
    let edges: Vec<_> = (0..8).map(|i| (i, (i + 1) % 8)).collect();
    let mut g = DenseGraph::from_edges(8, &edges);
    g.adj[0][4] = true;
    let scores = pagerank(&g.to_citation_graph(), PagerankParams::default()).unwrap();
    assert_eq!(scores.iterations, Some(100));
    assert_eq!(scores.converged, Some(false));
}
