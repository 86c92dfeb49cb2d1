mod common;

use std::path::Path;

use fedrec_core::config::{validate_config, DatasetSource, ExperimentConfig};
use fedrec_core::data::{generate_synthetic, write_dataset, DatasetPaths, SynthConfig};
use fedrec_core::experiment::{rerender_verdict, run_experiment};
use fedrec_core::protocol::MessageKind;
use fedrec_core::Error;

use common::*;

fn minimal(out: &Path) -> ExperimentConfig {
    let mut c = validate_config(&repo_root().join("configs/minimal.toml")).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

#[test]
fn minimal_run_writes_the_artifact_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&minimal(dir.path())).unwrap();
    assert_eq!(outcome.round_logs.len(), 2);
    assert_eq!(outcome.reports.len(), 3);
    assert!(!outcome.local_reports.is_empty());
    for name in [
        "metrics_fl.json",
        "metrics_sum.json",
        "metrics_public_only.json",
        "metrics_local.json",
        "verdict.json",
        "rounds/round_000.json",
        "rounds/round_001.json",
        "rounds.json",
        "audit_summary.json",
        "serving_log.json",
        "recall_model.json",
        "summary.json",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    assert!(outcome.audit.clean());
    assert_eq!(outcome.audit.messages, outcome.audit.passed);
    let serving = &outcome.serving.messages;
    assert!(serving.iter().any(|m| m.kind() == MessageKind::TopTRequest));
    assert!(serving
        .iter()
        .any(|m| m.kind() == MessageKind::FinalListPush));
}

#[test]
fn t_not_below_k_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = minimal(dir.path());
    c.pipeline.t = c.pipeline.k;
    match run_experiment(&c).unwrap_err().root() {
        Error::InvalidConfig(v) => assert!(v.iter().any(|m| m.contains("pipeline.t")), "{v:?}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn identical_runs_write_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&minimal(a.path())).unwrap();
    run_experiment(&minimal(b.path())).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn stored_reports_rerender_the_same_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&minimal(dir.path())).unwrap();
    assert_eq!(rerender_verdict(dir.path(), None).unwrap(), outcome.verdict);
    let loose = rerender_verdict(dir.path(), Some(10.0)).unwrap();
    assert!(loose.delta_pass);
    assert_eq!(loose.primary_gap, outcome.verdict.primary_gap);
}

#[test]
fn file_backed_dataset_matches_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut synthetic = minimal(&dir.path().join("synthetic"));
    let DatasetSource::Synthetic(cfg) = synthetic.dataset.clone() else {
        panic!("expected synthetic")
    };
    let data_dir = dir.path().join("data");
    std::fs::create_dir(&data_dir).unwrap();
    write_dataset(
        &generate_synthetic(&cfg, synthetic.seed).unwrap(),
        &DatasetPaths::in_dir(&data_dir),
    )
    .unwrap();

    let mut files = synthetic.clone();
    files.output_dir = dir.path().join("files");
    let p = DatasetPaths::in_dir(&data_dir);
    files.dataset = DatasetSource::Files {
        catalog: p.catalog,
        public: p.public,
        interactions: p.interactions,
        private: p.private,
    };
    synthetic.federation.threads = 1;
    files.federation.threads = 1;
    let a = run_experiment(&synthetic).unwrap();
    let b = run_experiment(&files).unwrap();
    assert_eq!(a.verdict, b.verdict);
    assert_eq!(a.final_params, b.final_params);
}

#[test]
fn committed_configs_validate() {
    for name in ["acceptance.toml", "minimal.toml"] {
        validate_config(&repo_root().join("configs").join(name)).unwrap();
    }
}

#[test]
fn partial_participation_logs_sampled_and_surviving_clients() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = acceptance_config(1, dir.path());
    c.dataset = DatasetSource::Synthetic(SynthConfig {
        n_users: 20,
        n_items: 80,
        interactions_per_user: 40,
        ..SynthConfig::default()
    });
    c.federation.rounds = 4;
    c.federation.participation_fraction = 0.5;
    c.federation.dropout_prob = 0.3;
    let outcome = run_experiment(&c).unwrap();
    for log in &outcome.round_logs {
        assert_eq!(log.sampled_clients.len(), 10);
        assert!(!log.participating_clients.is_empty());
        assert!(log
            .participating_clients
            .iter()
            .all(|p| log.sampled_clients.contains(p)));
    }
}
