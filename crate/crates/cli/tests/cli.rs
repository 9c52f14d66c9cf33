//! End-to-end CLI tests driving the built binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_facade-recon"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn dump_graph_defaults() {
    let out = bin().args(["dump-graph", "--rows", "25", "--cols", "5"]).output().unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["nodes"], 125);
    assert_eq!(json["sensors"].as_array().unwrap().len(), 24);
    // grid edges alone are 220; enrichment edges come on top
    assert!(json["edges"].as_array().unwrap().len() >= 220);
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = bin().arg("--definitely-not-a-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn missing_required_config_exits_2() {
    let out = bin().arg("synth").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_1_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    // modes = 0 with zero noise is rejected with a field path
    write(
        &cfg,
        r#"{"graph": {"rows": 5, "cols": 3, "sensors": [0, 7, 14]},
            "directions_deg": [0.0], "t_full": 100, "sample_rate_hz": 100.0,
            "modes": 0, "noise_sigma": 0.0, "seed": 1}"#,
    );
    let out = bin()
        .args(["synth", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(err["error"].as_str().unwrap().contains("synth.modes"));
}

#[test]
fn full_pipeline_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let recon = dir.path().join("recon");
    let fcst = dir.path().join("fcst");
    let two = dir.path().join("two");

    let synth_cfg = dir.path().join("synth.json");
    write(
        &synth_cfg,
        r#"{"graph": {"rows": 5, "cols": 3, "sensors": [0, 2, 4, 7, 10, 12, 14]},
            "directions_deg": [0.0, 20.0], "t_full": 700, "sample_rate_hz": 250.0,
            "modes": 2, "mode_freqs_hz": [5.0, 11.0], "noise_sigma": 0.05, "seed": 9}"#,
    );
    let st = bin()
        .args(["--threads", "1", "synth", "--config", synth_cfg.to_str().unwrap(), "--out", data.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(data.join("manifest.json").exists());

    let train_cfg = dir.path().join("train.json");
    write(
        &train_cfg,
        r#"{"seed": 3,
            "model": {"window": 32,
                      "encoder": {"blocks": 2, "kernel": 3, "dilations": [1, 2], "channels": 16, "strided_layers": 2},
                      "graph": {"layers": 2, "hidden": 16, "heads": 4},
                      "decoder": {"upsample_layers": 2, "residual_blocks": 1}},
            "train": {"epochs": 2, "steps_per_epoch": 2, "batch": 2, "lr": 1e-3,
                      "weight_decay": 0.0, "clip_norm": 1.0, "seed": 3,
                      "curriculum": {"stage1_masked": 1, "stage2_masked": 2, "switch_epoch": 1}}}"#,
    );
    let st = bin()
        .args([
            "--threads", "1",
            "train",
            "--config", train_cfg.to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out", run.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let ck = run.join("checkpoint.frck");
    assert!(ck.exists());
    assert!(run.join("checkpoint.frck.json").exists());
    assert!(run.join("train_log.jsonl").exists());
    assert!(run.join("config_snapshot.json").exists());

    let scenario = dir.path().join("scenario.json");
    write(&scenario, r#"{"masked_sensors": [1, 4]}"#);
    let recon_cfg = dir.path().join("recon.json");
    write(
        &recon_cfg,
        r#"{"overlap": {"hop": 16}, "welch": {"nperseg": 64}, "segment": "holdout", "plot_nodes": [1, 3]}"#,
    );
    let out = bin()
        .args([
            "--threads", "1",
            "reconstruct",
            "--checkpoint", ck.to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--scenario", scenario.to_str().unwrap(),
            "--config", recon_cfg.to_str().unwrap(),
            "--out", recon.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    for col in ["RMSE", "MAE", "Correlation", "PSD (%)"] {
        assert!(table.contains(col), "missing {col} in:\n{table}");
    }
    assert!(recon.join("metrics.json").exists());

    // evaluate recomputes metrics.json bit-exactly
    let before = std::fs::read(recon.join("metrics.json")).unwrap();
    let out = bin().args(["--threads", "1", "evaluate", "--recon", recon.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("match"));
    let after = std::fs::read(recon.join("metrics.json")).unwrap();
    assert_eq!(before, after);

    // forecaster training + two-stage prediction
    let fcst_cfg = dir.path().join("fcst.json");
    write(
        &fcst_cfg,
        r#"{"task": "forecaster", "seed": 4,
            "scenario": {"masked_sensors": [1, 4]},
            "forecast": {"t_hist": 64, "horizon": 48, "channels": 8, "dilations": [1, 2, 4],
                         "epochs": 2, "steps_per_epoch": 2, "batch": 2, "lr": 1e-3, "seed": 4}}"#,
    );
    let st = bin()
        .args([
            "--threads", "1",
            "train",
            "--config", fcst_cfg.to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out", fcst.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let fck = fcst.join("forecaster.frck");
    assert!(fck.exists());

    let out = bin()
        .args([
            "--threads", "1",
            "forecast",
            "--recon-ck", ck.to_str().unwrap(),
            "--fcst-ck", fck.to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--scenario", scenario.to_str().unwrap(),
            "--horizon-samples", "48",
            "--out", two.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(two.join("twostage.json").exists());
    assert!(two.join("y_future_twostage.fprd").exists());

    // arch-summary prints a parameter table
    let out = bin().args(["arch-summary", "--config", train_cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("encoder.block0.conv1.weight"));
    assert!(text.contains("total"));
}
