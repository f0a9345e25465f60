use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

fn sscl(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sscl")).arg("--workdir").arg(workdir).args(args).output().expect("spawn sscl")
}

fn ok_json(workdir: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = sscl(workdir, &full);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus-src");
    ok_json(dir, &["synth", "--out", corpus.to_str().unwrap()]);
    corpus
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn evaluate_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let report = ok_json(
        dir.path(),
        &[
            "evaluate",
            "--predictions",
            f.join("predictions.tsv").to_str().unwrap(),
            "--gold",
            f.join("gold.tsv").to_str().unwrap(),
            "--aspects",
            f.join("aspects.txt").to_str().unwrap(),
            "--name",
            "tiny",
        ],
    );
    // s11 has no gold label; s4 is Unknown and counts as a miss.
    assert_eq!(report["n_segments"], 10);
    assert!(close(report["micro_f1"].as_f64().unwrap(), 0.6));
    let per: Vec<(f64, f64, f64)> = report["per_aspect"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e[1]["precision"].as_f64().unwrap(), e[1]["recall"].as_f64().unwrap(), e[1]["f1"].as_f64().unwrap()))
        .collect();
    let expected = [(2.0 / 3.0, 0.5, 4.0 / 7.0), (0.5, 2.0 / 3.0, 4.0 / 7.0), (1.0, 2.0 / 3.0, 0.8)];
    for (got, want) in per.iter().zip(expected) {
        assert!(close(got.0, want.0) && close(got.1, want.1) && close(got.2, want.2), "{got:?} vs {want:?}");
    }
    // support weights 0.4 / 0.3 / 0.3
    let w = &report["weighted_macro"];
    assert!(close(w["precision"].as_f64().unwrap(), 43.0 / 60.0));
    assert!(close(w["recall"].as_f64().unwrap(), 0.6));
    assert!(close(w["f1"].as_f64().unwrap(), 0.64));

    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/tiny.json")).unwrap()).unwrap();
    assert_eq!(written["micro_f1"], report["micro_f1"]);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("eval/tiny.confusion.tsv")).unwrap(),
        std::fs::read_to_string(f.join("expected_confusion.tsv")).unwrap()
    );
}

#[test]
fn synthetic_pipeline_runs_reruns_and_forces() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth(dir.path());
    for stage in ["preprocess", "train-embeddings", "init-aspects", "train-teacher", "keywords", "map-auto"] {
        assert_eq!(ok_json(&ws, &[stage])["status"], "done", "{stage}");
    }
    let infer = ok_json(&ws, &["infer", "--split", "dev"]);
    assert!(infer["micro_f1"].as_f64().unwrap() >= 0.9, "{infer}");
    let distill = ok_json(&ws, &["distill"]);
    assert!(distill["dev_micro_f1"].as_f64().unwrap() >= 0.9, "{distill}");
    assert!(distill["test_micro_f1"].as_f64().unwrap() >= 0.9, "{distill}");
    let eval = ok_json(&ws, &["evaluate", "--predictions", ws.join("student/dev.tsv").to_str().unwrap()]);
    assert_eq!(eval["micro_f1"], distill["dev_micro_f1"]);
    assert!(ws.join("eval/dev.json").exists());

    let teacher = std::fs::read(ws.join("teacher/teacher.json")).unwrap();
    assert_eq!(ok_json(&ws, &["train-teacher"])["status"], "up-to-date");
    assert_eq!(ok_json(&ws, &["--force", "train-teacher"])["status"], "done");
    assert_eq!(std::fs::read(ws.join("teacher/teacher.json")).unwrap(), teacher, "same seed, same bytes");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("manifests/train-teacher.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["teacher"]["lambda"], 0.5);

    let grid = [
        "--set",
        "ablation.attention=[\"smooth\",\"regular\"]",
        "--set",
        "ablation.lambda=[0.5]",
        "--set",
        "ablation.batch_size=[50]",
        "--set",
        "teacher.epochs=2",
        "ablate",
    ];
    ok_json(&ws, &grid);
    let rows = std::fs::read_to_string(ws.join("ablation/results.tsv")).unwrap();
    assert_eq!(rows.lines().count(), 3, "{rows}");
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let ws = synth(dir.path());

    assert_eq!(code(&sscl(&ws, &["--set", "teacher.lamda=1", "preprocess"])), 2);
    assert_eq!(code(&sscl(&ws, &["--set", "paths.train=/nonexistent/train.txt", "preprocess"])), 3);
    assert_eq!(code(&sscl(&ws, &["keywords"])), 3);

    ok_json(&ws, &["preprocess"]);
    assert_eq!(code(&sscl(&ws, &["--set", "preprocess.min_count=2", "preprocess"])), 6);
    ok_json(&ws, &["--force", "--set", "preprocess.min_count=2", "preprocess"]);

    std::fs::write(ws.join(".sscl.lock"), "1\n").unwrap();
    let locked = sscl(&ws, &["preprocess"]);
    assert_eq!(code(&locked), 6);
    assert!(String::from_utf8_lossy(&locked.stderr).contains("locked"));
    std::fs::remove_file(ws.join(".sscl.lock")).unwrap();

    std::fs::write(ws.join("corpus/segments.jsonl"), "{not json\n").unwrap();
    let out = sscl(&ws, &["--json", "train-embeddings"]);
    assert_eq!(code(&out), 5);
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["exit_code"], 5);
}

#[test]
fn show_config_layers_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sscl.toml"), "seed = 7\n[teacher]\nlambda = 2.0\n").unwrap();
    let c = ok_json(dir.path(), &["--set", "teacher.lambda=3.5", "show-config"]);
    assert_eq!(c["seed"], 7);
    assert_eq!(c["teacher"]["lambda"], 3.5);
    assert_eq!(c["teacher"]["mu"], 1.0);
    assert!(!dir.path().join(".sscl.lock").exists());
}
