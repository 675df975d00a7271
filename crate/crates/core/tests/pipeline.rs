use std::fs;
use std::path::Path;

use sihd_core::pipeline::{mean_std, normalized_score, read_json, run_pipeline, Config, EvalReport, Manifest, SeedReport, STAGES};
use sihd_core::SihdError;

fn small(extra: &[&str]) -> Config {
    let mut o: Vec<String> = [
        "episodes=30",
        "train_steps=40",
        "hidden=16",
        "batch_size=8",
        "kde_samples=4",
        "refresh_every=20",
        "diffusion_steps=5",
        "eval_episodes=2",
        "eval_seeds=3",
        "horizon=16",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    Config::from_toml_str("", &o).unwrap()
}

fn all_stages() -> Vec<String> {
    STAGES.iter().map(|s| s.to_string()).collect()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap()
}

#[test]
fn tree_height_one_is_rejected_at_load() {
    assert!(matches!(Config::from_toml_str("tree_height = 1", &[]), Err(SihdError::Config(_))));
    assert!(Config::from_toml_str("", &["tree_height=1".into()]).is_err());
}

#[test]
fn rerun_skips_every_stage_with_identical_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let first = run_pipeline(&cfg, tmp.path()).unwrap();
    assert_eq!(first.executed, all_stages());
    let report = read(tmp.path(), "report.json");
    let second = run_pipeline(&cfg, tmp.path()).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.skipped, all_stages());
    assert_eq!(second.report, first.report);
    assert_eq!(read(tmp.path(), "report.json"), report);

    let manifest: Manifest = read_json(tmp.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash_hex());
    assert!(STAGES.iter().all(|s| manifest.stage(s).is_some()));
}

#[test]
fn same_config_in_fresh_directory_gives_byte_identical_report() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small(&[]);
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&cfg, b.path()).unwrap();
    assert_eq!(read(a.path(), "report.json"), read(b.path(), "report.json"));
    assert_eq!(read(a.path(), "model.bin"), read(b.path(), "model.bin"));
}

#[test]
fn tampered_artifact_reruns_only_its_stage_and_config_change_reruns_all() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    run_pipeline(&cfg, tmp.path()).unwrap();
    fs::write(tmp.path().join("plan.json"), b"{}").unwrap();
    let again = run_pipeline(&cfg, tmp.path()).unwrap();
    assert_eq!(again.executed, vec!["plan".to_string()]);
    let changed = small(&["omega=0.2"]);
    let third = run_pipeline(&changed, tmp.path()).unwrap();
    assert_eq!(third.executed, all_stages());
}

#[test]
fn zero_episodes_gives_flagged_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(&small(&["eval_episodes=0"]), tmp.path()).unwrap();
    let r = out.report;
    assert!(r.zero_episodes);
    assert_eq!(r.episodes, 0);
    assert!(r.per_seed.is_empty());
    assert_eq!(r.normalized_score, None);
    assert_eq!(r.goal_reach_rate, 0.0);
}

#[test]
fn seed_summary_matches_manual_aggregation_of_seed_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(&small(&["eval_seeds=5"]), tmp.path()).unwrap();
    let seeds: Vec<SeedReport> = (0..5)
        .map(|i| read_json(tmp.path().join(format!("eval/seed_{i}.json"))).unwrap())
        .collect();
    let rates: Vec<f64> = seeds.iter().map(|s| s.planner.goal_reach_rate).collect();
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let summary = out.report.reach_rate_over_seeds.unwrap();
    assert!((summary.mean - mean).abs() < 1e-12);
    assert!((summary.std - std).abs() < 1e-12);
    assert_eq!(out.report.episodes, seeds.iter().map(|s| s.episodes).sum::<usize>());
    let report: EvalReport = read_json(tmp.path().join("report.json")).unwrap();
    assert_eq!(report.per_seed, seeds);
    for s in &seeds {
        assert!((0.0..=1.0).contains(&s.planner.goal_reach_rate));
    }
}

#[test]
fn normalization_anchors_random_at_zero_and_greedy_at_hundred() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_pipeline(&small(&[]), tmp.path()).unwrap().report;
    let (lo, hi) = (r.random.mean_cumulative_reward, r.greedy.mean_cumulative_reward);
    assert!(hi > lo);
    assert_eq!(normalized_score(lo, lo, hi), Some(0.0));
    assert_eq!(normalized_score(hi, lo, hi), Some(100.0));
    assert_eq!(mean_std(&[]), None);
}

#[test]
fn deleted_or_corrupted_artifacts_are_regenerated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let report = {
        run_pipeline(&cfg, tmp.path()).unwrap();
        read(tmp.path(), "report.json")
    };
    fs::remove_file(tmp.path().join("model.bin")).unwrap();
    let out = run_pipeline(&cfg, tmp.path()).unwrap();
    assert_eq!(out.executed, vec!["train".to_string()]);
    fs::write(tmp.path().join("dataset.jsonl"), "not json\n").unwrap();
    let out = run_pipeline(&cfg, tmp.path()).unwrap();
    assert_eq!(out.executed, vec!["synth".to_string()]);
    assert_eq!(read(tmp.path(), "report.json"), report);
}

#[test]
fn failing_stage_is_named_in_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_maze.txt");
    let cfg = small(&[&format!("maze={}", missing.display())]);
    match run_pipeline(&cfg, tmp.path()) {
        Err(SihdError::Stage { stage, path, source }) => {
            assert_eq!(stage, "synth");
            assert_eq!(path, tmp.path().join("dataset.jsonl"));
            assert!(matches!(*source, SihdError::Io { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(!tmp.path().join("report.json").exists());
}
