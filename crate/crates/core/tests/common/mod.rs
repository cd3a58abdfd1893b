#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use slr_core::corpus::{Corpus, FormatProfile};
use slr_core::evaluation::parse_gold_jsonl;
use slr_core::llm::{Gateway, MockProvider, ProviderConfig};
use slr_core::pipeline::{run_pipeline, PipelineConfig, PipelineReport};
use slr_core::taxonomy::TaxonomyRegistry;
use slr_core::{Clock, FixedClock};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn clock() -> FixedClock {
    FixedClock::ymd(2025, 1, 20)
}

/// Runs the 12-paper fixture through the whole pipeline and returns every
/// rendered artifact, including the ingestion summary.
pub fn run_e2e() -> (PipelineReport, BTreeMap<String, String>) {
    let clock = clock();
    let mut corpus = Corpus::new();
    let delta = corpus
        .ingest_export(&fixture("e2e/corpus.csv"), &FormatProfile::scopus_csv(), clock.now())
        .expect("fixture corpus reads");
    let mock = MockProvider::from_file(&fixture("e2e/mock_script.jsonl")).expect("mock script parses");
    let gateway = Gateway::new(ProviderConfig::mock("mock"), Arc::new(mock));
    let gold = parse_gold_jsonl(&fs::read_to_string(fixture("e2e/gold.jsonl")).unwrap()).expect("gold parses");
    let report = run_pipeline(&corpus, &TaxonomyRegistry::builtin(), &gateway, &gold, &PipelineConfig::new(3, &clock))
        .expect("pipeline runs");
    let mut artifacts = report.artifacts.clone();
    artifacts.insert("ingest.txt".into(), delta.summary() + "\n");
    (report, artifacts)
}

pub fn expected_tables() -> BTreeMap<String, String> {
    let dir = fixture("e2e/expected");
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, fs::read_to_string(&path).unwrap());
    }
    out
}

/// Names of expected tables that are missing or differ from `actual`.
pub fn mismatches(actual: &BTreeMap<String, String>, expected: &BTreeMap<String, String>) -> Vec<String> {
    expected
        .iter()
        .filter(|(name, want)| actual.get(*name) != Some(*want))
        .map(|(name, _)| name.clone())
        .collect()
}
