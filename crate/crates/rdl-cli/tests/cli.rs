//! End-to-end checks of the `rdl` binary: artifact layout, determinism of
//! repeated invocations, error reporting, and the worked cost example.

use std::path::Path;
use std::process::{Command, Output};

fn rdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdl"))
        .args(args)
        .env("RDL_THREADS", "1")
        .output()
        .expect("spawn rdl")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY_DATA: &str = "synthetic:classes=3,train=6,test=3,side=8,noise=0.05,seed=40";

fn train_args_on<'a>(out_dir: &'a str, dataset: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--arch",
        "wrn",
        "--depth",
        "10",
        "--widen",
        "1",
        "--policy",
        "std",
        "--residual",
        "true",
        "--dataset",
        dataset,
        "--epochs",
        "2",
        "--batch",
        "6",
        "--lr",
        "0.02",
        "--seed",
        "1",
        "--out",
        out_dir,
    ]
}

fn train_args(out_dir: &str) -> Vec<&str> {
    train_args_on(out_dir, TINY_DATA)
}

#[test]
fn analyze_reports_the_reference_flops() {
    let out = rdl(&[
        "analyze", "--arch", "wrn", "--depth", "22", "--widen", "2", "--policy", "g=2",
        "--residual", "true", "--input", "3x32x32", "--format", "json",
    ]);
    let stdout = assert_ok(&out);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let flops = report["flops"].as_u64().unwrap() as f64;
    let published = 93.65e6;
    assert!(
        (flops - published).abs() / published < 0.005,
        "flops {flops} vs published {published}"
    );
    assert!(report["per_layer"].as_array().unwrap().len() > 10);

    // The text sweep renders one row per policy and flags indivisible ones.
    let out = rdl(&[
        "analyze", "--arch", "wrn", "--depth", "22", "--widen", "2", "--sweep", "g=2,g=4,g=5",
        "--input", "3x32x32",
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("g=2"));
    assert!(stdout.contains("does not divide"));
}

#[test]
fn train_produces_the_artifact_set_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let run_a = rdl(&train_args(out_a.to_str().unwrap()));
    let stdout = assert_ok(&run_a);
    assert!(stdout.contains("test top-1"));
    for file in ["arch.json", "traincfg.json", "norm.json", "model.ckpt", "history.csv"] {
        assert!(out_a.join(file).exists(), "missing {file}");
    }
    let history = std::fs::read_to_string(out_a.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,train_loss,train_acc,test_acc\n"));
    assert_eq!(history.lines().count(), 3, "header plus one line per epoch");

    let run_b = rdl(&train_args(out_b.to_str().unwrap()));
    assert_ok(&run_b);
    for file in ["history.csv", "model.ckpt", "arch.json", "norm.json"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn distill_consumes_a_teacher_directory() {
    let dir = tempfile::tempdir().unwrap();
    let teacher_dir = dir.path().join("teacher");
    assert_ok(&rdl(&train_args(teacher_dir.to_str().unwrap())));

    let student_dir = dir.path().join("student");
    let out = rdl(&[
        "distill",
        "--arch",
        "wrn",
        "--depth",
        "10",
        "--widen",
        "1",
        "--policy",
        "g=2",
        "--residual",
        "false",
        "--dataset",
        TINY_DATA,
        "--epochs",
        "1",
        "--batch",
        "6",
        "--lr",
        "0.02",
        "--seed",
        "2",
        "--teacher",
        teacher_dir.to_str().unwrap(),
        "--temperature",
        "4",
        "--alpha",
        "0.9",
        "--out",
        student_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(student_dir.join("model.ckpt").exists());
    let cfg = std::fs::read_to_string(student_dir.join("traincfg.json")).unwrap();
    assert!(cfg.contains("\"temperature\": 4.0"));

    // A missing teacher directory is a file-system error, exit code 6.
    let out = rdl(&[
        "distill", "--arch", "wrn", "--depth", "10", "--widen", "1", "--dataset", TINY_DATA,
        "--teacher", dir.path().join("nope").to_str().unwrap(), "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(6));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "single-line error: {stderr}");
    assert!(stderr.starts_with("error: "));
}

#[test]
fn matrix_with_no_cells_writes_an_empty_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "schema": "matrix/1",
        "family": "wrn",
        "depth": 10,
        "widen": 1,
        "dropout_p": 0.0,
        "teachers": [],
        "students": [],
        "seeds": [],
        "dataset": {"kind": "synthetic", "classes": 3, "train_per_class": 2,
                     "test_per_class": 1, "side": 8, "noise": 0.05, "seed": 1},
        "train": {"epochs": 1, "batch_size": 4,
                   "sgd": {"lr0": 0.1, "momentum": 0.9, "weight_decay": 0.0004},
                   "schedule": {"kind": "step_decay", "milestones": [], "factor": 10.0},
                   "seed": 0, "augment_pad": null, "distill": null}
    });
    let cfg_path = dir.path().join("empty.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = rdl(&[
        "matrix", "--config", cfg_path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(
        results,
        "family,depth,widen,policy,residual,mode,teacher,seed,top1_test,top1_train,params,flops,epochs\n"
    );
    assert!(out_dir.join("table.csv").exists());

    // A wrong schema tag never starts computation: exit code 3.
    std::fs::write(&cfg_path, r#"{"schema": "matrix/0"}"#).unwrap();
    let out = rdl(&[
        "matrix", "--config", cfg_path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn matrix_then_report_round_trips_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "schema": "matrix/1",
        "family": "wrn",
        "depth": 10,
        "widen": 1,
        "dropout_p": 0.0,
        "teachers": [{"kind": "constant_group_size", "value": 1}],
        "students": [{"kind": "constant_groups", "value": 2}],
        "seeds": [1],
        "dataset": {"kind": "synthetic", "classes": 3, "train_per_class": 6,
                     "test_per_class": 3, "side": 8, "noise": 0.05, "seed": 40},
        "train": {"epochs": 1, "batch_size": 6,
                   "sgd": {"lr0": 0.02, "momentum": 0.9, "weight_decay": 0.0004},
                   "schedule": {"kind": "step_decay", "milestones": [], "factor": 10.0},
                   "seed": 0, "augment_pad": null, "distill": null}
    });
    let cfg_path = dir.path().join("m.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    assert_ok(&rdl(&[
        "matrix", "--config", cfg_path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
    ]));

    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5, "header + 4 runs:\n{results}");

    let report = rdl(&["report", "--results", out_dir.join("results.csv").to_str().unwrap()]);
    let stdout = assert_ok(&report);
    assert!(stdout.contains("Acc. drop"), "{stdout}");
    assert!(stdout.contains("Distil. gain"));
    assert!(stdout.contains("NR-g=2"));
    assert!(stdout.contains("R-G=1"));
}

#[test]
fn viz_exports_raw_and_projected_activations() {
    let dir = tempfile::tempdir().unwrap();
    let model_dir = dir.path().join("model");
    assert_ok(&rdl(&train_args(model_dir.to_str().unwrap())));

    let raw = dir.path().join("act.csv");
    let out = rdl(&[
        "viz", "--model", model_dir.to_str().unwrap(), "--dataset", TINY_DATA, "--classes",
        "0,2", "--out", raw.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&raw).unwrap();
    assert!(text.starts_with("sample_id,class_id,f0,"));
    assert_eq!(text.lines().count(), 7, "header + 3 test samples x 2 classes");

    let proj = dir.path().join("proj.csv");
    let out = rdl(&[
        "viz", "--model", model_dir.to_str().unwrap(), "--dataset", TINY_DATA, "--worst", "2",
        "--project", "--out", proj.to_str().unwrap(),
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("rows for classes"));
    let text = std::fs::read_to_string(&proj).unwrap();
    assert!(text.starts_with("sample_id,class_id,x,y\n"));

    // Unknown class id: compute-stage error, single line.
    let out = rdl(&[
        "viz", "--model", model_dir.to_str().unwrap(), "--dataset", TINY_DATA, "--classes",
        "9", "--out", raw.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn flag_errors_use_distinct_exit_codes() {
    // Unknown flag: clap usage error.
    let out = rdl(&["analyze", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // Bad policy string: config error.
    let out = rdl(&["analyze", "--arch", "wrn", "--policy", "q=3"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--policy"), "{stderr}");

    // Missing dataset directory: data error.
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = rdl(&train_args_on(
        out_dir.to_str().unwrap(),
        "cifar100:/definitely/missing",
    ));
    assert_eq!(out.status.code(), Some(4));
}
