use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pmixed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmixed"))
        .args(args)
        .output()
        .expect("pmixed runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_record(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("error line")).expect("stderr is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = "alpha = 18\nbeta = 0.2\nN = 4\nsigma = 1e-2\nlambda = 1e-4\nT = 4.5\ntop_k = 10\nseed = 1\n";

/// A small corpus and trained models in a fresh directory.
fn setup() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    let text: String = (0..40)
        .map(|i| format!("the {} cat sat on mat number {i} and {} rats ran\n", ["fat", "thin", "grey"][i % 3], i * 7))
        .collect();
    fs::write(&corpus, text).unwrap();
    let models = dir.path().join("models");
    let out = pmixed(&[
        "train-shards", "--corpus", s(&corpus), "--n", "4", "--out-dir", s(&models),
        "--public-fraction", "0.2", "--seed", "3",
    ]);
    json_stdout(&out);
    let config = dir.path().join("config.toml");
    fs::write(&config, CONFIG).unwrap();
    (dir, models, config)
}

#[test]
fn decode_then_account() {
    let (dir, models, config) = setup();
    let ledger = dir.path().join("ledger.jsonl");
    let report_path = dir.path().join("report.json");
    let report = json_stdout(&pmixed(&[
        "decode", "--models", s(&models), "--config", s(&config),
        "--ledger", s(&ledger), "--report", s(&report_path),
    ]));
    let written: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report, written);
    assert!(report["queries_answered"].as_u64().unwrap() > 0);
    assert_eq!(report["config_snapshot"]["ensemble_size"], 4);

    let audit = json_stdout(&pmixed(&["account", "--ledger", s(&ledger)]));
    assert_eq!(audit["mismatches"].as_array().unwrap().len(), 0);
    assert_eq!(audit["eps_rdp"], report["eps_rdp_final"]);
    assert_eq!(audit["eps_dp"], report["eps_dp_final"]);
}

#[test]
fn tampered_ledger_fails_the_audit() {
    let (dir, models, config) = setup();
    let ledger = dir.path().join("ledger.jsonl");
    json_stdout(&pmixed(&[
        "decode", "--models", s(&models), "--config", s(&config), "--ledger", s(&ledger),
        "--report", s(&dir.path().join("r.json")), "--max-queries", "20",
    ]));
    let text = fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut record: Value = serde_json::from_str(&lines[5]).unwrap();
    record["cum_rdp"] = Value::from(123.0);
    lines[5] = record.to_string();
    fs::write(&ledger, lines.join("\n") + "\n").unwrap();

    let out = pmixed(&["account", "--ledger", s(&ledger)]);
    assert_eq!(out.status.code(), Some(3));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["mismatches"][0]["line"], 6);
    assert_eq!(error_record(&out)["error"], "ledger_mismatch");

    fs::write(&ledger, format!("{}\n{{not json\n", lines[0])).unwrap();
    let err = error_record(&pmixed(&["account", "--ledger", s(&ledger)]));
    assert_eq!(err["error"], "parse");
    assert_eq!(err["line"], 2);
}

#[test]
fn config_errors_name_the_field() {
    let (dir, models, config) = setup();
    fs::write(&config, CONFIG.replace("sigma = 1e-2", "sigma = 0")).unwrap();
    let out = pmixed(&[
        "decode", "--models", s(&models), "--config", s(&config),
        "--ledger", s(&dir.path().join("l")), "--report", s(&dir.path().join("r")),
    ]);
    let err = error_record(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "sigma");

    fs::write(&config, CONFIG.replace("top_k = 10", "top_k = 10000")).unwrap();
    let err = error_record(&pmixed(&[
        "decode", "--models", s(&models), "--config", s(&config),
        "--ledger", s(&dir.path().join("l")), "--report", s(&dir.path().join("r")),
    ]));
    assert_eq!(err["field"], "top_k");
}

#[test]
fn too_many_shards_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, "one\ntwo\nthree\n").unwrap();
    let out_dir = dir.path().join("models");
    let err = error_record(&pmixed(&[
        "train-shards", "--corpus", s(&corpus), "--n", "5", "--out-dir", s(&out_dir),
    ]));
    assert_eq!(err["error"], "not_enough_documents");
    assert!(!out_dir.exists());
}

#[test]
fn evaluate_and_sweep() {
    let (dir, models, config) = setup();
    let eval = json_stdout(&pmixed(&["evaluate", "--models", s(&models)]));
    assert_eq!(eval["private"].as_array().unwrap().len(), 4);

    let csv = dir.path().join("t.csv");
    let rows = json_stdout(&pmixed(&[
        "sweep", "--models", s(&models), "--config", s(&config), "--param", "threshold",
        "--values=-inf,2,inf", "--out", s(&csv), "--max-queries", "100",
    ]));
    assert_eq!(rows.as_array().unwrap().len(), 3);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param,value,eps_rdp,eps_dp,ppl,screened_out");
    assert!(lines[1].starts_with("threshold,-inf,"));
    assert!(lines[1].ends_with(",100"));
    assert!(lines[3].ends_with(",0"));
    assert!(dir.path().join("t.csv.runs/run_002.ledger.jsonl").exists());

    let err = error_record(&pmixed(&[
        "sweep", "--models", s(&models), "--config", s(&config), "--param", "beta",
        "--values", "0.1,-2", "--out", s(&csv),
    ]));
    assert_eq!(err["field"], "beta");
}
