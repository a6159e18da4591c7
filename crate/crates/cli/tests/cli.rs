mod common;

use std::process::Output;

use serde_json::json;

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = common::apec(dir.path(), &["stats", "--bogus"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn zero_workers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    let out = common::apec(dir.path(), &["stats", "--input", "dev.jsonl", "--workers", "0"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = common::apec(dir.path(), &["stats", "--input", "nope.jsonl"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn bad_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    std::fs::write(dir.path().join("run.toml"), "[apec]\ncycle = 3\n").unwrap();
    let out = common::apec(dir.path(), &["--config", "run.toml", "stats", "--input", "dev.jsonl"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn http_provider_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    let out = common::apec(dir.path(), &["adapt", "--input", "dev.jsonl", "--mode", "zs", "--output", "a.jsonl"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("LLM_ENDPOINT"), "{}", stderr(&out));
}

#[test]
fn unreachable_provider_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    std::fs::write(dir.path().join("run.toml"), "[llm]\nretries = 0\n").unwrap();
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_apec"));
    let out = cmd
        .current_dir(dir.path())
        .env("LLM_ENDPOINT", "http://127.0.0.1:9/v1/chat/completions")
        .env_remove("LLM_API_KEY")
        .args(["--config", "run.toml", "adapt", "--input", "dev.jsonl", "--mode", "zs", "--output", "a.jsonl"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn existing_output_is_refused_without_append() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    let args = ["stats", "--input", "dev.jsonl", "--output", "s.jsonl"];
    assert_eq!(code(&common::apec(dir.path(), &args)), 0);
    assert_eq!(code(&common::apec(dir.path(), &args)), 3);
    let mut appended = args.to_vec();
    appended.push("--append");
    assert_eq!(code(&common::apec(dir.path(), &appended)), 0);
    let lines = std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 2);
}

#[test]
fn partially_scripted_adaptation_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    common::seed_workspace(dir.path());
    let mut fixture = common::adapt_fixture("D", 10);
    fixture.truncate(4);
    common::write_jsonl(&dir.path().join("short.jsonl"), &fixture);
    let out = common::apec(
        dir.path(),
        &["adapt", "--input", "dev.jsonl", "--mode", "zs", "--provider", "scripted:short.jsonl", "--output", "a.jsonl"],
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let written = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap().lines().count();
    assert_eq!(written, 4);
}

#[test]
fn ensemble_reports_missing_documents() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let trace = |stream: &str, doc: &str, score: f64| {
        json!({
            "schema_version": 1, "stream": stream, "doc_id": doc, "task": "PL", "source": "s",
            "initial": "i", "initial_score": score, "demo_ids": [], "records": [],
            "final": format!("{stream} {doc}"), "final_score": score, "complete": true
        })
    };
    common::write_jsonl(&p.join("a.jsonl"), &[trace("a", "x", 50.0), trace("a", "y", 60.0)]);
    common::write_jsonl(&p.join("b.jsonl"), &[trace("b", "x", 50.0)]);
    let out = common::apec(
        p,
        &["ensemble", "--traces", "a.jsonl", "--traces", "b.jsonl", "--priority", "b,a", "--output", "e.jsonl"],
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("y missing from b"), "{}", stderr(&out));
    let chosen: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(p.join("e.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(chosen["doc_id"], "x");
    assert_eq!(chosen["stream"], "b");
}

#[test]
fn ensemble_needs_two_streams() {
    let dir = tempfile::tempdir().unwrap();
    common::write_jsonl(&dir.path().join("a.jsonl"), &[]);
    let out = common::apec(dir.path(), &["ensemble", "--traces", "a.jsonl", "--output", "e.jsonl"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn tablecheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = common::apec(dir.path(), &["tablecheck"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
