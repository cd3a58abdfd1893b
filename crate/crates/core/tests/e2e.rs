mod common;

use common::{expected_tables, mismatches, run_e2e};

#[test]
fn fixture_pipeline_matches_expected_tables() {
    let (_, actual) = run_e2e();
    let expected = expected_tables();
    for name in mismatches(&actual, &expected) {
        eprintln!("--- {name}\nexpected:\n{}\nactual:\n{}", expected[&name], actual.get(&name).map_or("<missing>", String::as_str));
    }
    assert!(mismatches(&actual, &expected).is_empty());
}

#[test]
fn two_runs_are_byte_identical() {
    let (_, first) = run_e2e();
    let (_, second) = run_e2e();
    assert_eq!(first, second);
}

#[test]
fn gate_restricts_downstream_dimensions() {
    let (report, _) = run_e2e();
    let positive = &report.gates["pricing_model"].positive;
    for dim in ["underlying", "option_type", "model_type"] {
        let targets: Vec<_> = report.run_sets[dim].targets.iter().collect();
        assert!(targets.iter().all(|p| positive.contains(*p)), "{dim}");
        assert_eq!(targets.len(), positive.len());
    }
}

#[test]
fn unparseable_reply_is_recorded_and_outvoted() {
    let (report, _) = run_e2e();
    let runs = &report.run_sets["underlying"];
    let id = "P10".into();
    let p10: Vec<_> = runs.runs_for(&id).collect();
    assert_eq!(p10.len(), 3);
    assert_eq!(p10.iter().filter(|a| a.is_ok()).count(), 2);
    assert_eq!(report.finals["underlying"].get("P10").unwrap().iter().collect::<Vec<_>>(), ["Stocks"]);
}
