use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ehdnas(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehdnas"))
        .args(args)
        .current_dir(dir)
        .env("EHDNAS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn bench_identity_arch_reports_latency() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehdnas(
        &[
            "bench",
            "--arch",
            "3,3,3,3,3,3",
            "--budget",
            "large",
            "--paradigm",
            "GP",
        ],
        dir.path(),
    );
    let report = json_of(&out);
    assert_eq!(report["feasible"], true);
    assert!(report["total_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn over_budget_pipeline_is_reported_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehdnas(
        &[
            "bench",
            "--space",
            "wide",
            "--arch",
            "0,0,0,0,0,0",
            "--budget",
            "small",
            "--paradigm",
            "PP",
        ],
        dir.path(),
    );
    let report = json_of(&out);
    assert_eq!(report["feasible"], false);
    assert_eq!(report["total_ms"], Value::Null);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehdnas(&["bench", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(ehdnas(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(ehdnas(&["bench", "--arch", "0,1"], dir.path()).status.code(), Some(1));
    assert_eq!(
        ehdnas(&["ingest", "--input", "missing.jsonl"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 11] = [
        (
            "gen-dataset",
            &["--space", "--budget", "--paradigm", "--seed", "--out-dir"],
        ),
        ("ingest", &["--input"]),
        ("bench", &["--arch", "--budget", "--paradigm"]),
        ("build-lut", &["--budget", "--out"]),
        ("train-hwloss", &["--train", "--val", "--out", "--seed"]),
        ("eval-hwloss", &["--model", "--data", "--compare-lut"]),
        ("gradcheck", &["--model", "--samples", "--seed"]),
        (
            "search",
            &["--beta", "--hw", "--model", "--hw-scale", "--seed", "--out"],
        ),
        ("sweep", &["--betas", "--seeds", "--hw"]),
        ("oracle", &["--budget", "--paradigm", "--objective"]),
        ("export-dot", &["--arch"]),
    ];
    for (cmd, flags) in cases {
        let out = ehdnas(&[cmd, "--help"], dir.path());
        assert!(out.status.success());
        let help = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn pipeline_stages_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out_dir in ["a", "b"] {
        let out = ehdnas(
            &[
                "gen-dataset",
                "--n-train",
                "300",
                "--n-val",
                "60",
                "--n-test",
                "60",
                "--seed",
                "3",
                "--out-dir",
                out_dir,
            ],
            p,
        );
        assert_eq!(json_of(&out)["train"], 300);
    }
    for split in ["train", "val", "test"] {
        let a = std::fs::read(p.join(format!("a/{split}.jsonl"))).unwrap();
        let b = std::fs::read(p.join(format!("b/{split}.jsonl"))).unwrap();
        assert_eq!(a, b);
    }

    for model in ["m1.json", "m2.json"] {
        let out = ehdnas(
            &[
                "train-hwloss",
                "--train",
                "a/train.jsonl",
                "--val",
                "a/val.jsonl",
                "--out",
                model,
                "--epochs",
                "5",
                "--batch-size",
                "64",
            ],
            p,
        );
        json_of(&out);
    }
    assert_eq!(
        std::fs::read(p.join("m1.json")).unwrap(),
        std::fs::read(p.join("m2.json")).unwrap()
    );

    let reports = json_of(&ehdnas(
        &[
            "eval-hwloss",
            "--model",
            "m1.json",
            "--data",
            "a/test.jsonl",
            "--compare-lut",
        ],
        p,
    ));
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["predictor"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["deep", "lut"]);

    let search = [
        "search", "--beta", "0.01", "--hw", "deep", "--model", "m1.json", "--seed", "7", "--epochs", "3",
    ];
    for out in ["r1.json", "r2.json"] {
        let args: Vec<&str> = search.iter().copied().chain(["--out", out]).collect();
        let result = json_of(&ehdnas(&args, p));
        assert_eq!(result["history"].as_array().unwrap().len(), 3);
    }
    assert_eq!(
        std::fs::read(p.join("r1.json")).unwrap(),
        std::fs::read(p.join("r2.json")).unwrap()
    );

    let check = json_of(&ehdnas(&["gradcheck", "--model", "m1.json", "--samples", "3"], p));
    assert!(check["hwloss_max_rel_err"].as_f64().unwrap() < 1e-4);
    assert!(check["supernet_max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn search_with_a_model_for_another_space_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("space.json"), r#"{"num_layers":2,"hidden_width":16,"input_dim":8,"num_classes":3,"catalog":[{"kind":"full_dense"},{"kind":"identity"}]}"#).unwrap();
    let out = ehdnas(
        &[
            "gen-dataset",
            "--space",
            "space.json",
            "--n-train",
            "64",
            "--n-val",
            "16",
            "--n-test",
            "16",
            "--out-dir",
            "d",
        ],
        p,
    );
    json_of(&out);
    json_of(&ehdnas(
        &[
            "train-hwloss",
            "--train",
            "d/train.jsonl",
            "--val",
            "d/val.jsonl",
            "--out",
            "m.json",
            "--epochs",
            "2",
            "--batch-size",
            "16",
        ],
        p,
    ));
    let out = ehdnas(
        &[
            "search", "--beta", "0.1", "--hw", "deep", "--model", "m.json", "--epochs", "1",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K=2"));
}

#[test]
fn oracle_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let best = json_of(&ehdnas(&["oracle", "--budget", "small"], dir.path()));
    assert_eq!(best["arch"], "3,3,3,3,3,3");
    let out = ehdnas(&["export-dot", "--arch", "0,3,3,3,3,4"], dir.path());
    assert!(out.status.success());
    let dot = String::from_utf8(out.stdout).unwrap();
    assert!(dot.starts_with("digraph arch {"));
    assert!(dot.contains("l0 [label=\"full_dense\"]") && dot.contains("l5 [label=\"zero\"]"));
}

#[test]
fn sweep_prints_the_documented_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ehdnas(
        &[
            "sweep",
            "--betas",
            "0.1,0.0001",
            "--seeds",
            "0",
            "--hw",
            "lut",
            "--epochs",
            "2",
            "--final-epochs",
            "2",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "beta,seed,latency_small_ms,latency_medium_ms,latency_large_ms,accuracy"
    );
    assert_eq!(lines.len(), 3);
    assert_eq!(std::fs::read_to_string(dir.path().join("s.csv")).unwrap(), text);
}
