use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ybev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ybev"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, data: &Path, steps: u64, lr: f64) -> std::path::PathBuf {
    let ch = [8, 16, 16];
    let cfg = json!({
        "dataset": data,
        "batch_size": 2,
        "steps": steps,
        "seed": 5,
        "lr": lr,
        "overfit_frames": 2,
        "out_dir": dir.join("run"),
        "model": {
            "backbone": {
                "stem_channels": 4,
                "stages": ch.iter().map(|c| json!({"channels": c, "stride": 2})).collect::<Vec<_>>(),
            },
            "head": {"n_l": 3, "ch": ch, "mid_channels": 8, "out_channels": 4},
            "canonical_size": [0.1, 0.045],
            "init_seed": 1,
        },
    });
    let path = dir.join("train.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn generate(dir: &Path, frames: usize) -> std::path::PathBuf {
    let data = dir.join("data");
    let o = ybev(&[
        "generate",
        "--frames",
        &frames.to_string(),
        "--seed",
        "40",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generate(dir, 2);
    assert!(data.join("frames/00000040.ppm").is_file());
    assert!(data.join("labels/00000041.json").is_file());

    let cfg = tiny_config(dir, &data, 3, 0.001);
    let o = ybev(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = dir.join("run/final.ybev");
    assert!(ckpt.is_file());
    assert_eq!(
        fs::read_to_string(dir.join("run/runlog.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let frame = data.join("frames/00000040.ppm");
    let o = ybev(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--frame",
        frame.to_str().unwrap(),
        "--conf",
        "0.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dets: Value = serde_json::from_slice(&o.stdout).unwrap();
    let dets = dets.as_array().unwrap();
    assert!(!dets.is_empty());
    assert!(dets[0]["box"]["cx"].is_number() && dets[0]["confidence"].is_number());

    let report = dir.join("report.json");
    let o = ybev(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n_frames"], 2);
    assert!(r["precision"].is_number() && r["recall"].is_number());

    let render = |name: &str| {
        let out = dir.join(name);
        let o = ybev(&[
            "render",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--frame",
            frame.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--side-by-side",
            "--size",
            "96",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = render("a.ppm");
    assert!(a.starts_with(b"P6\n196 96\n255\n"));
    assert_eq!(a, render("b.ppm"));
    assert!(render("c.png").starts_with(b"\x89PNG"));
}

#[test]
fn gridsearch_reports_failed_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generate(dir, 2);
    let cfg = tiny_config(dir, &data, 2, 0.001);
    let o = ybev(&[
        "gridsearch",
        "--config",
        cfg.to_str().unwrap(),
        "--lrs",
        "0.001,1e300",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("best lr: 0.001"), "{table}");
    assert!(table.contains("failed"), "{table}");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/gridsearch.json")).unwrap())
            .unwrap();
    assert_eq!(report["rows"][1]["status"], "failed");
}

#[test]
fn missing_checkpoint_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ybev(&[
        "infer",
        "--ckpt",
        tmp.path().join("nope.ybev").to_str().unwrap(),
        "--frame",
        "x.ppm",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.ybev"));
}

#[test]
fn bad_config_is_reported_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{\n  \"steps\": 10,\n  \"lr\": oops\n}\n").unwrap();
    let o = ybev(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&path, "{\"lr\": -1.0}").unwrap();
    let o = ybev(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning rate"), "{}", stderr(&o));
}

#[test]
fn divergent_training_exits_with_nonfinite_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = generate(tmp.path(), 2);
    let cfg = tiny_config(tmp.path(), &data, 4, 1e300);
    let o = ybev(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn threshold_out_of_range_is_rejected() {
    let o = ybev(&["infer", "--ckpt", "a", "--frame", "b", "--conf", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--conf"));
}
