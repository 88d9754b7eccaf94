//! End-to-end checks of the command-line front end: exit codes,
//! overrides, output determinism, and the recorded trace hash.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_canim"))
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("scenarios")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("canim_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn report_is_deterministic_and_hash_matches_trace() {
    let out_a = fresh_dir("rep_a");
    let out_b = fresh_dir("rep_b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args([
                "report",
                "--config",
                scenario_dir().join("zero.json").to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let rep_a = fs::read(out_a.join("report.json")).unwrap();
    let rep_b = fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(rep_a, rep_b, "identical configs must produce identical reports");

    let trace_a = fs::read(out_a.join("trace.csv")).unwrap();
    let trace_b = fs::read(out_b.join("trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b);

    // recompute the hash the report recorded
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(&trace_a);
    let digest = format!("{:x}", h.finalize());
    let parsed: serde_json::Value = serde_json::from_slice(&rep_a).unwrap();
    assert_eq!(parsed["trace_sha256"].as_str().unwrap(), digest);
    assert_eq!(parsed["seed"].as_u64().unwrap(), parsed["scenario"]["seed"].as_u64().unwrap());
}

#[test]
fn zero_disturbance_observation_reports_tiny_errors() {
    let out = fresh_dir("zero_obs");
    let status = bin()
        .args([
            "observe",
            "--config",
            scenario_dir().join("zero.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let parsed: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    for sig in ["err_dhat", "err_x2hat"] {
        let v = parsed["metrics"]["signals"][sig]["final_window_error"]
            .as_f64()
            .unwrap();
        assert!(v < 1e-3, "{sig} = {v:.3e}");
    }
}

#[test]
fn overrides_apply_and_echo_into_the_report() {
    let out = fresh_dir("override");
    let status = bin()
        .args([
            "track",
            "--config",
            scenario_dir().join("benchmark.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "t_end=5",
            "--set",
            "seed=7",
            "--set",
            "mode=track_and_reject",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let parsed: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(parsed["scenario"]["t_end"].as_f64().unwrap(), 5.0);
    assert_eq!(parsed["scenario"]["seed"].as_u64().unwrap(), 7);
    assert_eq!(parsed["scenario"]["mode"].as_str().unwrap(), "track_and_reject");

    // header plus 5 s at step 1e-3 decimated by 10
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 501);
}

#[test]
fn unknown_keys_are_config_errors() {
    let out = fresh_dir("badkey");
    let output = bin()
        .args([
            "report",
            "--config",
            scenario_dir().join("zero.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "bogus_knob=3",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bogus_knob"), "diagnostic must name the key: {stderr}");

    // same for an unknown key inside the config file itself
    let cfg = fresh_dir("badcfg").join("bad.json");
    let mut doc: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(scenario_dir().join("zero.json")).unwrap(),
    )
    .unwrap();
    doc["mystery"] = serde_json::json!(1);
    fs::write(&cfg, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let output = bin()
        .args(["report", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("mystery"));
}

#[test]
fn missing_config_exits_two() {
    let output = bin()
        .args(["track", "--config", "/definitely/not/here.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn plot_emits_figures_for_every_recorded_signal_group() {
    let out = fresh_dir("plots");
    let status = bin()
        .args([
            "track",
            "--config",
            scenario_dir().join("benchmark.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--set",
            "t_end=45",
            "--plot",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    // benchmark.json runs the identifier, so the frequency figure is
    // included alongside the five estimation/tracking figures
    for stem in [
        "x2hat_error",
        "dhat_error",
        "theta_error",
        "omega_error",
        "position_error",
        "velocity_error",
    ] {
        let svg = out.join(format!("{stem}.svg"));
        let dat = out.join(format!("{stem}.dat"));
        assert!(svg.exists(), "missing {}", svg.display());
        assert!(dat.exists(), "missing {}", dat.display());
        let body = fs::read_to_string(&svg).unwrap();
        assert!(body.starts_with("<svg") && body.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn out_dir_defaults_to_the_environment_variable() {
    let out = fresh_dir("envvar");
    let status = bin()
        .args([
            "observe",
            "--config",
            scenario_dir().join("zero.json").to_str().unwrap(),
            "--set",
            "t_end=1",
        ])
        .env("CANIM_OUT_DIR", &out)
        .current_dir(std::env::temp_dir())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("trace.csv").exists());
    assert!(out.join("report.json").exists());
}
