use std::path::Path;

use flare_core::campaign::{run_campaign, AdapterConfig, CampaignConfig, CampaignError};
use flare_core::demo;
use flare_core::spec::Pattern;

fn config(dir: &Path, scenario: &str, iterations: u64, seed: u64) -> CampaignConfig {
    demo::scenario_campaign(dir, scenario, Pattern::FreeForm, iterations, seed).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_campaign(&config(a.path(), "demo_free_form", 15, 3)).unwrap();
    run_campaign(&config(b.path(), "demo_free_form", 15, 3)).unwrap();
    for f in [
        "coverage.json",
        "corpus.json",
        "state.json",
        "reports/failures.json",
    ] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn different_seeds_diverge() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_campaign(&config(a.path(), "demo_free_form", 15, 3)).unwrap();
    run_campaign(&config(b.path(), "demo_free_form", 15, 4)).unwrap();
    assert_ne!(read(a.path(), "corpus.json"), read(b.path(), "corpus.json"));
}

#[test]
fn zero_budget_bootstraps_only() {
    let d = tempfile::tempdir().unwrap();
    let r = run_campaign(&config(d.path(), "healthy_free_form", 0, 1)).unwrap();
    assert_eq!(r.iterations_run, 0);
    assert!(r.run_ids.is_empty());
    assert_eq!(r.corpus.seeds().len(), 3);
    let report = r.report.unwrap();
    assert_eq!(report.runs_analyzed, 0);
    assert!(report.confirmed.is_empty());
    assert!(d.path().join("out/state.json").is_file());
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let whole = tempfile::tempdir().unwrap();
    run_campaign(&config(whole.path(), "demo_free_form", 12, 9)).unwrap();
    let split = tempfile::tempdir().unwrap();
    run_campaign(&config(split.path(), "demo_free_form", 5, 9)).unwrap();
    let r = run_campaign(&config(split.path(), "demo_free_form", 12, 9)).unwrap();
    assert_eq!(r.iterations_run, 12);
    for f in ["coverage.json", "corpus.json", "state.json"] {
        assert_eq!(read(whole.path(), f), read(split.path(), f), "{f}");
    }
}

#[test]
fn changed_seed_refuses_to_resume() {
    let d = tempfile::tempdir().unwrap();
    run_campaign(&config(d.path(), "healthy_free_form", 2, 1)).unwrap();
    let err = run_campaign(&config(d.path(), "healthy_free_form", 4, 2)).unwrap_err();
    assert!(matches!(err, CampaignError::StateMismatch(_)), "{err}");
}

#[test]
fn parallel_batches_run_the_whole_budget() {
    let d = tempfile::tempdir().unwrap();
    let cfg = CampaignConfig {
        parallelism: 3,
        ..config(d.path(), "healthy_free_form", 10, 5)
    };
    let r = run_campaign(&cfg).unwrap();
    assert_eq!(r.iterations_run, 10);
    assert_eq!(r.run_ids.len(), 10);
    for id in &r.run_ids {
        assert!(d
            .path()
            .join(format!("out/events/{id}.iteration.json"))
            .is_file());
    }
}

#[test]
fn subprocess_adapter_campaign() {
    let d = tempfile::tempdir().unwrap();
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_adapter.py");
    let mut cfg = config(d.path(), "healthy_free_form", 4, 2);
    cfg.adapter = AdapterConfig {
        command: Some(format!("python3 {script} tool_error")),
        ..AdapterConfig::default()
    };
    let r = run_campaign(&cfg).unwrap();
    assert_eq!(r.run_ids.len(), 4);
    let report = r.report.unwrap();
    assert_eq!(report.runs_analyzed, 4);
    assert!(report
        .confirmed
        .iter()
        .any(|c| c.root_cause == flare_core::oracle::RootCause::ToolExecutionError));
}

#[test]
fn crashing_adapter_is_reported_as_runtime_crash() {
    let d = tempfile::tempdir().unwrap();
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy_adapter.py");
    let mut cfg = config(d.path(), "healthy_free_form", 3, 2);
    cfg.adapter = AdapterConfig {
        command: Some(format!("python3 {script} crash")),
        ..AdapterConfig::default()
    };
    let report = run_campaign(&cfg).unwrap().report.unwrap();
    assert_eq!(report.runtime_crashes.len(), 3);
    assert_eq!(report.runs_analyzed, 0);
}
