//! Runs the binary through the whole pipeline on a small synthetic room.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tsdf-refine")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1, "one JSON object per invocation");
    serde_json::from_str(&text).unwrap()
}

/// synth-scene -> pairs -> refine -> extract -> eval, returning the eval object.
fn pipeline(dir: &Path) -> Value {
    let small = ["--width", "41", "--height", "31", "--focal", "30"];
    let mut synth = vec!["synth-scene", "--kind", "room", "--views", "6", "--out", "scan", "--seed", "5"];
    synth.extend(small);
    assert_eq!(json(dir, &synth)["frames"], 6);
    json(dir, &["pairs", "--scan", "scan", "--out", "pair", "--seed", "5"]);
    json(dir, &[
        "refine", "--init", "pair/input.tsdf", "--target", "pair/target.tsdf", "--scan", "scan", "--out",
        "refined.tsdf", "--history", "history.csv", "--iters", "4", "--seed", "5",
    ]);
    json(dir, &["extract", "--volume", "refined.tsdf", "--out", "refined.ply"]);
    json(dir, &["extract", "--volume", "pair/target.tsdf", "--out", "target.ply"]);
    json(dir, &[
        "eval", "--pred", "refined.ply", "--target", "target.ply", "--ignore", "pair/target.tsdf", "--pred-volume",
        "refined.tsdf", "--scan", "scan", "--samples", "2000", "--seed", "5",
    ])
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ea, eb) = (pipeline(a.path()), pipeline(b.path()));
    for key in ["ssim", "iou", "recall", "chamfer"] {
        let (x, y) = (ea[key].as_f64().unwrap(), eb[key].as_f64().unwrap());
        assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12), "{key}: {x} vs {y}");
    }
    let iou = ea["iou"].as_f64().unwrap();
    assert!(iou > 0.0 && iou <= ea["recall"].as_f64().unwrap());

    let csv = std::fs::read_to_string(a.path().join("history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,l_depth,l_color,l_geo3d,total");
    assert_eq!(lines.len(), 5);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("pair/pair.json")).unwrap()).unwrap();
    assert_eq!(meta["input_frames"].as_array().unwrap().len(), 3);
}

#[test]
fn fuse_render_chunks_and_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    json(dir, &["synth-scene", "--kind", "sphere", "--views", "4", "--out", "scan", "--seed", "1"]);
    let fused = json(dir, &["fuse", "--scan", "scan", "--out", "full.tsdf", "--voxel-size", "0.04"]);
    assert!(fused["observed"].as_u64().unwrap() > 0);

    json(dir, &["render", "--volume", "full.tsdf", "--scan", "scan", "--frame", "0", "--out-prefix", "v0"]);
    let depth = image::open(dir.join("v0.depth.png")).unwrap().into_luma16();
    let mm = depth.get_pixel(40, 40).0[0];
    assert!((mm as i32 - 1500).abs() <= 40, "center depth {mm} mm");
    let normal = image::open(dir.join("v0.normal.png")).unwrap().into_rgb8();
    // the center normal faces the camera, so it is far from the zero sentinel
    assert!(normal.get_pixel(40, 40).0.iter().any(|&c| c != 0));
    assert!(dir.join("v0.color.png").exists());

    json(dir, &["pairs", "--scan", "scan", "--out", "pair", "--seed", "2"]);
    let n = json(dir, &["chunks", "--pair", "pair", "--scan", "scan", "--out", "chunks"])["chunks"].as_u64().unwrap();
    let manifest = std::fs::read_to_string(dir.join("chunks/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count() as u64, n);
    for line in manifest.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["occupancy"].as_f64().unwrap() >= 0.005);
        assert!(rec["frames"].as_array().unwrap().len() <= 5);
        assert!(dir.join("chunks").join(rec["input_path"].as_str().unwrap()).exists());
    }

    let report = json(dir, &["eval-loss", "--volume", "pair/target.tsdf", "--target", "pair/target.tsdf", "--scan", "scan"]);
    let total = report["total"].as_f64().unwrap();
    let parts = 0.1 * report["l_geo3d"].as_f64().unwrap()
        + report["l_depth"].as_f64().unwrap()
        + report["l_color"].as_f64().unwrap();
    assert!((total - parts).abs() < 1e-9);
    assert_eq!(report["l_geo3d"].as_f64().unwrap(), 0.0);
}

#[test]
fn errors_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tsdf-refine"))
        .current_dir(tmp.path())
        .args(["fuse", "--scan", "no-such-scan", "--out", "x.tsdf"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-scan"));
    let out = Command::new(env!("CARGO_BIN_EXE_tsdf-refine"))
        .args(["synth-scene", "--kind", "cube", "--out", "x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
