//! End-to-end tests of the `mmfuse` binary: command wiring, exit codes,
//! machine-parsable error classes, artifact layout, and manifest-driven
//! reproduction.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmfuse"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(!out.status.success(), "expected failure for {args:?}");
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let line = stderr.lines().last().unwrap_or_default();
    assert!(
        line.starts_with("error["),
        "stderr must end with a single machine-parsable line, got {stderr:?}"
    );
    line.to_string()
}

fn write_synth(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("synth.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().to_string(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn synth_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":40,"dev":10,"test":10,"d_t":5,"d_v":4,"seed":3}"#,
    );
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(out_a.join("features.bin")).unwrap(),
        std::fs::read(out_b.join("features.bin")).unwrap(),
        "same seed must produce identical feature bytes"
    );
    let report = run_ok(&["ingest-validate", "--data", out_a.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&report.stdout).to_string();
    assert!(text.contains("valid MMFV1 dataset"), "{text}");
    assert!(text.contains("40 train"), "{text}");

    // refusing to clobber without --force
    let line = run_err(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(line.starts_with("error[cli/output-exists]"), "{line}");
}

#[test]
fn synth_rho_one_marks_manifest_extras() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":12,"dev":4,"test":4,"d_t":4,"d_v":3,"text_informative_frac":1.0,"seed":1}"#,
    );
    let out = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    for line in manifest.lines() {
        assert!(line.contains(r#""informative":"text""#), "{line}");
    }
}

#[test]
fn majority_training_is_immediate_and_matches_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":3,"train":60,"dev":15,"test":15,"d_t":4,"d_v":3,"seed":6}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--model",
        "majority",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(run_dir.join("checkpoint.mmck").exists());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"format\": \"metrics.v1\""), "{metrics}");

    let eval_dir = tmp.path().join("eval");
    run_ok(&[
        "evaluate",
        "--checkpoint",
        run_dir.join("checkpoint.mmck").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let m1: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    let m2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(m1["metrics"], m2["metrics"]);
}

#[test]
fn training_pipeline_is_reproducible_and_leaves_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":80,"dev":20,"test":20,"d_t":5,"d_v":4,"missing_image_frac":0.25,"seed":9}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let before = dir_snapshot(&data);

    let run_cfg = tmp.path().join("run.json");
    std::fs::write(
        &run_cfg,
        format!(
            r#"{{"model":"mm-gate","dataset":{:?},"hidden_dim":8,"train":{{"max_epochs":4,"seeds":[2]}}}}"#,
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out_a = tmp.path().join("ra");
    let out_b = tmp.path().join("rb");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "train",
            "--config",
            run_cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        std::fs::read(out_a.join("checkpoint_seed_2.mmck")).unwrap(),
        std::fs::read(out_b.join("checkpoint_seed_2.mmck")).unwrap(),
        "identical configs must give identical checkpoints"
    );
    assert_eq!(
        std::fs::read(out_a.join("metrics_seed_2.json")).unwrap(),
        std::fs::read(out_b.join("metrics_seed_2.json")).unwrap()
    );
    assert_eq!(before, dir_snapshot(&data), "train must not mutate the dataset directory");

    // the manifest's config echo reproduces the run bit-identically
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["format"], "run-manifest.v1");
    let echo = manifest["config"].clone();
    let echo_cfg = tmp.path().join("echo.json");
    std::fs::write(&echo_cfg, serde_json::to_string(&echo).unwrap()).unwrap();
    let out_c = tmp.path().join("rc");
    run_ok(&[
        "train",
        "--config",
        echo_cfg.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(out_a.join("checkpoint_seed_2.mmck")).unwrap(),
        std::fs::read(out_c.join("checkpoint_seed_2.mmck")).unwrap(),
        "the manifest echo must reproduce the run"
    );
}

#[test]
fn paired_regime_on_fully_paired_data_matches_all() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":60,"dev":15,"test":15,"d_t":4,"d_v":3,"seed":12}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let mut outputs = Vec::new();
    for regime in ["all", "paired-all"] {
        let out = tmp.path().join(regime);
        run_ok(&[
            "train",
            "--model",
            "mm-gate",
            "--data",
            data.to_str().unwrap(),
            "--regime",
            regime,
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        outputs.push(std::fs::read(out.join("metrics_seed_1.json")).unwrap());
    }
    // fully-paired data: filtering is the identity, metrics must agree
    let a: serde_json::Value = serde_json::from_slice(&outputs[0]).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&outputs[1]).unwrap();
    assert_eq!(a["metrics"], b["metrics"]);
}

#[test]
fn paired_regime_without_pairs_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":30,"dev":10,"test":10,"d_t":4,"d_v":3,"missing_image_frac":1.0,"seed":2}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let line = run_err(&[
        "train",
        "--model",
        "mm-gate",
        "--data",
        data.to_str().unwrap(),
        "--regime",
        "paired-all",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert!(line.starts_with("error[data/empty-split]"), "{line}");
}

#[test]
fn baseline_prints_published_row_and_writes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("baseline");
    let output = run_ok(&["baseline", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("F1 5.30 P 3.36 R 12.50"), "{stdout}");
    assert!(out.join("metrics.json").exists());
}

#[test]
fn analysis_commands_and_unsupported_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":60,"dev":15,"test":15,"d_t":4,"d_v":3,"seed":4}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--model",
        "mm-xatt",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let ckpt = run_dir.join("checkpoint_seed_1.mmck");

    // attention dump works for mm-xatt
    let attn_dir = tmp.path().join("attn");
    run_ok(&[
        "dump-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        attn_dir.to_str().unwrap(),
    ]);
    let dump = std::fs::read_to_string(attn_dir.join("attention.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), 15);
    for line in dump.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for row in v["attn_t2v"].as_array().unwrap() {
            let s: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-6, "attention row must sum to 1, got {s}");
        }
    }

    // gate analysis is unsupported for mm-xatt
    let line = run_err(&[
        "analyze-gate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("gate").to_str().unwrap(),
    ]);
    assert!(line.starts_with("error[eval/unsupported-analysis]"), "{line}");

    // errors report conserves the misclassification count
    let err_dir = tmp.path().join("errs");
    run_ok(&[
        "errors",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        err_dir.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(err_dir.join("errors.json")).unwrap())
            .unwrap();
    let total = report["total_errors"].as_u64().unwrap();
    let cell_sum: u64 =
        report["cells"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).sum();
    assert_eq!(total, cell_sum);
}

#[test]
fn log_env_var_controls_verbosity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_synth(
        tmp.path(),
        r#"{"classes":2,"train":30,"dev":10,"test":10,"d_t":4,"d_v":3,"seed":5}"#,
    );
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    let out = bin()
        .env("MMFUSE_LOG", "info")
        .args([
            "train",
            "--model",
            "text",
            "--data",
            data.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("INFO"), "info logging must reach stderr: {stderr}");
}

#[test]
fn missing_inputs_fail_with_error_classes() {
    let line = run_err(&["ingest-validate", "--data", "/nonexistent/dataset"]);
    assert!(line.starts_with("error[data/io]"), "{line}");
    let line = run_err(&["train", "--model", "text"]);
    assert!(line.starts_with("error[cli/config]"), "{line}");
    let tmp = tempfile::tempdir().unwrap();
    let line = run_err(&[
        "evaluate",
        "--checkpoint",
        "/nonexistent/model.mmck",
        "--data",
        "/nonexistent/data",
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert!(line.starts_with("error[data/io]"), "{line}");
}
