use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/toy")
        .join(name)
        .display()
        .to_string()
}

fn ckprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckprobe"))
        .args(args)
        .env_remove("CKPROBE_ENDPOINT")
        .output()
        .unwrap()
}

fn probe_args(out: &Path) -> Vec<String> {
    [
        "probe",
        "--kb",
        &toy("conceptnet.tsv"),
        "--vocab",
        &toy("vocab.txt"),
        "--templates",
        &toy("templates.tsv"),
        "--corpus",
        &toy("corpus.txt"),
        "--out",
        &out.display().to_string(),
    ]
    .map(String::from)
    .to_vec()
}

fn run(args: &[String]) -> Output {
    ckprobe(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = ckprobe(&[]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn unknown_subcommand_fails() {
    let out = ckprobe(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn probe_writes_sixty_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&probe_args(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 60);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "probe");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);
    assert!(manifest["outputs"]["results.jsonl"].is_string());
}

#[test]
fn missing_input_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out");
    let mut args = probe_args(&target);
    args[2] = toy("no_such_file.tsv");
    let out = run(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));
    assert!(!target.exists());
}

#[test]
fn remote_scorer_without_endpoint_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out");
    let mut args = probe_args(&target);
    args.extend(["--scorer".to_string(), "remote".to_string()]);
    let out = run(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("endpoint"));
    assert!(!target.exists());
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "kz = [1, 5]\n").unwrap();
    let target = dir.path().join("out");
    let out = ckprobe(&["fusion-check", "--config", config.to_str().unwrap(), "--out", target.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!target.exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let probe_out = dir.path().join("probe");
    assert!(run(&probe_args(&probe_out)).status.success());
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "ks = [1, 5]\nresults = \"probe/results.jsonl\"\nout = \"metrics\"\n").unwrap();

    let out = ckprobe(&["metrics", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hits: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("metrics/hits.json")).unwrap()).unwrap();
    assert_eq!(hits["ks"], serde_json::json!([1, 5]));

    let out = ckprobe(&["metrics", "--config", config.to_str().unwrap(), "--ks", "10,100"]);
    assert!(out.status.success());
    let hits: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("metrics/hits.json")).unwrap()).unwrap();
    assert_eq!(hits["ks"], serde_json::json!([10, 100]));
}

#[test]
fn fusion_check_reports_small_error() {
    let out = ckprobe(&["fusion-check"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max relative gradient error ")
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(value < 1e-4, "{stdout}");
}

#[test]
fn ingest_counts_dropped_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckprobe(&[
        "ingest",
        "--kb",
        &toy("conceptnet.tsv"),
        "--vocab",
        &toy("vocab.txt"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("parse_report.json")).unwrap()).unwrap();
    assert_eq!(report["non_english"], 2);
    assert_eq!(report["unknown_relation"], 1);
    assert_eq!(report["duplicates_merged"], 1);
    assert_eq!(report["malformed"].as_array().unwrap().len(), 2);
    let groups = std::fs::read_to_string(dir.path().join("probe_groups.jsonl")).unwrap();
    assert_eq!(groups.lines().count(), 60);
    let stats = std::fs::read_to_string(dir.path().join("relation_stats.tsv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 37 + 1);
}

#[test]
fn partition_is_reproducible_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let preds = [
        toy("predictions_strong.json"),
        toy("predictions_mid.json"),
        toy("predictions_weak.json"),
    ]
    .join(",");
    let run_with = |name: &str, seed: &str| {
        let target = dir.path().join(name);
        let out = ckprobe(&[
            "partition",
            "--squad",
            &toy("squad_dev.json"),
            "--predictions",
            &preds,
            "--sim-threshold",
            "0.5",
            "--cap",
            "2",
            "--seed",
            seed,
            "--out",
            target.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(target.join("samples.tsv")).unwrap()
    };
    assert_eq!(run_with("a", "7"), run_with("b", "7"));
}

#[test]
fn rc_analyze_and_report_run_on_toy_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckprobe(&[
        "rc-analyze",
        "--squad",
        &toy("squad_dev.json"),
        "--predictions",
        &format!("strong={}", toy("predictions_strong.json")),
        "--out",
        dir.path().join("rc").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = std::fs::read_to_string(dir.path().join("rc/bucket_curve.tsv")).unwrap();
    assert!(curve.starts_with("split\tbin\tlo\thi\tcount\tstrong\n"));

    let probe_out = dir.path().join("probe");
    assert!(run(&probe_args(&probe_out)).status.success());
    let results = probe_out.join("results.jsonl");
    let out = ckprobe(&[
        "report",
        "--results",
        results.to_str().unwrap(),
        "--out",
        dir.path().join("report").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["hits_by_relation.tsv", "overlap.tsv", "cross_grade.tsv", "shapes.tsv", "plot_rank_log10.tsv"] {
        assert!(dir.path().join("report").join(f).is_file(), "{f}");
    }
}
