use std::path::Path;
use std::process::{Command, Output};

fn pals(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pals")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{
  "seed": 3,
  "grid_hi": {"dims": [32, 32, 32], "origin": [0, 0, 0], "extent": [5, 5, 5]},
  "grid_lo": {"dims": [16, 16, 16], "origin": [0, 0, 0], "extent": [5, 5, 5]},
  "kind": "spherical",
  "phantom": "sphere",
  "schedule": {"outer_iters": 3, "p0": 10, "p": 5},
  "gn": {"it_gn": 2},
  "modalities": [{"modality": "dip", "n_experiments": 4, "noise": {"seed": 1}}],
  "svg": true
}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gradcheck_all_families_pass() {
    let o = pals(&["gradcheck", "--family", "all", "--trials", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 9);
}

#[test]
fn unknown_gradcheck_family_is_a_usage_error() {
    let o = pals(&["gradcheck", "--family", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn metrics_of_a_grid_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(pals(&["phantom", "--name", "dumbbell", "--dims", "24", "--out-dir", out]).status.success());
    let header = dir.path().join("phantom.json");
    let h = header.to_str().unwrap();
    let o = pals(&["metrics", "--recon", h, "--truth", h]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["iou"], 1.0);
    assert_eq!(v["volume_rel_err"], 0.0);
}

#[test]
fn reconstruct_then_export_at_a_finer_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = pals(&["reconstruct", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["params.json", "recon.json", "recon.raw", "field.json", "trace.csv", "config.json", "metrics.json", "misfit.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 1 + 3 * 2);

    let params = out.join("params.json");
    let o = pals(&[
        "export",
        "--params",
        params.to_str().unwrap(),
        "--dims",
        "64",
        "--threshold",
        "0.7",
        "--dtype",
        "u8",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::metadata(out.join("export.raw")).unwrap().len(), 64 * 64 * 64);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut payloads = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = pals(&["reconstruct", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        payloads.push((std::fs::read(out.join("params.json")).unwrap(), std::fs::read(out.join("recon.raw")).unwrap()));
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn simulated_dips_read_back_through_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = pals(&["simulate", "--modality", "dip", "--phantom", "sphere", "--n", "3", "--out-dir", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("from_files.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "spherical", "schedule": {"outer_iters": 2, "p0": 10, "p": 5}, "gn": {"it_gn": 1},
            "modalities": [{"modality": "dip", "files": ["sim/dips.csv"]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = pals(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("params.json").exists());
    // no phantom, no metrics
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn bad_configs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"modalities": [], "lamda": 1}"#).unwrap();
    let o = pals(&["reconstruct", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: invalid:") && err.contains("lamda"), "{err}");

    std::fs::write(&cfg, r#"{"phantom": "sphere", "modalities": [{"modality": "dip", "n_experiments": 2}], "gn": {"lambda0": -1}}"#)
        .unwrap();
    assert_eq!(pals(&["reconstruct", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(pals(&["reconstruct", "--config", "/nonexistent/run.json"]).status.code(), Some(1));
    assert_eq!(pals(&["reconstruct"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert!(pals(&["--help"]).status.success());
    assert!(pals(&["--version"]).status.success());
}
