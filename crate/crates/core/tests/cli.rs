//! End-to-end runs of the `omnisweep` binary on a small grid.

use std::path::Path;
use std::process::{Command, Output};

const GRID: [&str; 6] = ["--width", "80", "--height", "20", "--n-spheres", "16"];

fn omnisweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnisweep")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = omnisweep(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth → cost → depth, returning the depth map bytes.
fn pipeline(dir: &Path) -> Vec<u8> {
    let mut synth = vec!["synth", "--out", s(dir), "--captures", "4"];
    synth.extend(GRID);
    ok(&synth);
    let images: Vec<String> = (0..4).map(|i| dir.join(format!("cam{i}.png")).to_str().unwrap().to_owned()).collect();
    let cost = dir.join("cost.ocsv");
    let rig = dir.join("rig.json");
    let mut args = vec!["cost", "--rig", s(&rig), "--out", s(&cost), "--window", "5", "--images"];
    args.extend(images.iter().map(String::as_str));
    args.extend(GRID);
    ok(&args);
    let depth = dir.join("depth.ocsv");
    ok(&["depth", "--cost", s(&cost), "--out", s(&depth)]);
    std::fs::read(depth).unwrap()
}

fn metrics(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("metrics are JSON")
}

#[test]
fn pipeline_is_deterministic_and_accurate() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));

    let (pred, gt) = (a.path().join("depth.ocsv"), a.path().join("gt_depth.ocsv"));
    let m = metrics(&ok(&["eval", "--pred", s(&pred), "--gt", s(&gt)]));
    assert!(m["valid_pixels"].as_u64().unwrap() > 0);
    assert!(m["mae"].as_f64().unwrap() < 5.0, "{m}");

    let same = metrics(&ok(&["eval", "--pred", s(&gt), "--gt", s(&gt)]));
    for key in ["pct_gt1", "pct_gt3", "pct_gt5", "mae", "rms"] {
        assert_eq!(same[key].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn panorama_and_cloud_outputs() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let (rig, depth) = (dir.path().join("rig.json"), dir.path().join("depth.ocsv"));
    let images: Vec<String> = (0..4).map(|i| dir.path().join(format!("cam{i}.png")).to_str().unwrap().to_owned()).collect();
    let pano = dir.path().join("pano.png");
    let mut args = vec!["panorama", "--rig", s(&rig), "--depth", s(&depth), "--out", s(&pano), "--images"];
    args.extend(images.iter().map(String::as_str));
    ok(&args);
    assert!(std::fs::metadata(&pano).unwrap().len() > 0);
    let cloud = dir.path().join("cloud.ply");
    ok(&["cloud", "--depth", s(&depth), "--out", s(&cloud)]);
    let points = omnisweep::io::read_ply(&cloud).unwrap();
    assert!(!points.is_empty() && points.len() <= 80 * 20);
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ocsv");
    assert_eq!(omnisweep(&["depth", "--cost", s(&missing), "--out", "x.ocsv"]).status.code(), Some(1));
    assert_eq!(omnisweep(&["depth", "--bogus"]).status.code(), Some(1));
    assert_eq!(omnisweep(&["--help"]).status.code(), Some(0));

    let garbage = dir.path().join("garbage.ocsv");
    std::fs::write(&garbage, b"NOPE00000000000000000000000000").unwrap();
    let out = omnisweep(&["depth", "--cost", s(&garbage), "--out", "x.ocsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));
}

#[test]
fn numeric_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut synth = vec!["synth", "--out", s(dir.path()), "--captures", "3"];
    synth.extend(GRID);
    ok(&synth);
    let corners = dir.path().join("corners.json");
    let mut doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&corners).unwrap()).unwrap();
    for record in doc["records"].as_array_mut().unwrap() {
        for corner in record["corners"].as_array_mut().unwrap() {
            corner["pixel"] = serde_json::json!({ "u": 300.0, "v": 240.0 });
        }
    }
    std::fs::write(&corners, serde_json::to_vec(&doc).unwrap()).unwrap();
    let intrinsics = dir.path().join("intrinsics.json");
    let out_rig = dir.path().join("out.json");
    let out = omnisweep(&["calibrate", "--corners", s(&corners), "--intrinsics", s(&intrinsics), "--out", s(&out_rig)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
