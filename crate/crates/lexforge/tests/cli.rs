use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn lexforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lexforge"))
        .args(args)
        .env_remove("POLILEGAL_ENDPOINT")
        .env_remove("POLILEGAL_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn published_ratios_check_passes_and_strict_tolerance_fails() {
    let ok = lexforge(&["mix", "check", "--manifest", "published-cpt"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(json(&ok)["passed"], true);
    let post = lexforge(&["mix", "check", "--manifest", "published-post-training"]);
    assert_eq!(code(&post), 0);
    let tight = lexforge(&["mix", "check", "--manifest", "published-cpt", "--tolerance", "0.0001"]);
    assert_eq!(code(&tight), 3);
}

#[test]
fn stage_plan_from_cli() {
    let out = lexforge(&["pack", "--total-tokens", "140000000000"]);
    assert_eq!(code(&out), 0);
    let stages = json(&out)["stages"].clone();
    assert_eq!(stages[0]["data_tokens"], 126_000_000_000u64);
    assert_eq!(stages[0]["sequences_per_step"], 96);
    assert_eq!(stages[1]["window_tokens"], 16384);
    assert_eq!(stages[1]["sequences_per_step"], 48);
}

#[test]
fn filter_then_score_with_mock() {
    let dir = tempfile::tempdir().unwrap();
    let filtered = dir.path().join("f.jsonl");
    let corpus = data("corpus.jsonl");
    let out = lexforge(&["filter", "--in", corpus.to_str().unwrap(), "--out", filtered.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats = &json(&out)["stats"];
    assert!(stats["kept"].as_u64().unwrap() < stats["input"].as_u64().unwrap());

    let scored = dir.path().join("s.jsonl");
    let args = ["score", "--mock", "--in", filtered.to_str().unwrap(), "--out", scored.to_str().unwrap(), "--sample-n", "40", "--seed", "5"];
    let a = lexforge(&args);
    let b = lexforge(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["stats"]["selected"], 40);
}

#[test]
fn missing_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lexforge(&["score", "--in", data("corpus.jsonl").to_str().unwrap(), "--out", dir.path().join("s.jsonl").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("POLILEGAL_ENDPOINT"));
}

#[test]
fn unreachable_endpoint_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = lexforge(&[
        "score",
        "--endpoint",
        "http://127.0.0.1:9",
        "--in",
        data("corpus.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("s.jsonl").to_str().unwrap(),
        "--sample-n",
        "2",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn broken_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[stages]\nhipo = true\n").unwrap();
    let out = lexforge(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hipo"));
    std::fs::write(&cfg, "seed = [").unwrap();
    assert_eq!(code(&lexforge(&["run", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn eval_and_schedule() {
    let out = lexforge(&["eval", "--in", data("eval_records.jsonl").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(json(&out)["tasks"].as_object().unwrap().len() >= 5);

    let dir = tempfile::tempdir().unwrap();
    let out = lexforge(&[
        "schedule",
        "psft",
        "--core",
        data("psft_core.jsonl").to_str().unwrap(),
        "--downstream",
        data("psft_downstream.jsonl").to_str().unwrap(),
        "--lambda",
        "0.2",
        "--batch",
        "10",
        "--seed",
        "3",
        "--out",
        dir.path().join("sched.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["core_quota"], 2);
    assert_eq!(json(&out)["observed_core_fraction"], 0.2);
}

#[test]
fn strict_run_over_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = lexforge(&[
        "run",
        "--config",
        data("pipeline.toml").to_str().unwrap(),
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["stages_run"].as_array().unwrap().len(), 8);
}
