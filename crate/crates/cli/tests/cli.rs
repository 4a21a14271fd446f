use std::path::Path;
use std::process::{Command, Output};

use apptrack_core::io::{parse_ground_truth, write_tracks};

fn apptrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apptrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"num_identities": 4, "num_frames": 30, "embed_dim": 16, "fp_rate": 0.5, "with_masks": true, "canvas": [200, 150], "box_size": [20, 40]}"#,
    )
    .unwrap();
    let out = apptrack(dir, &["synth", "--config", "cfg.json", "--seed", "5", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn threshold_order_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = apptrack(
        dir.path(),
        &["track", "--input", "data/detections.jsonl", "--output", "t.jsonl", "--high-thresh", "0.2", "--low-thresh", "0.3"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly below high_thresh"));
    assert!(!dir.path().join("t.jsonl").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(apptrack(dir.path(), &["track", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(apptrack(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(apptrack(dir.path(), &["--help"]).status.code(), Some(0));
    let missing = apptrack(dir.path(), &["nms", "--input", "nope.jsonl", "--output", "x"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.jsonl"), "{\"sequence\": 1}\n").unwrap();
    let bad = apptrack(dir.path(), &["track", "--input", "bad.jsonl", "--output", "x"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.jsonl:1"));
    let bad_thresh = apptrack(dir.path(), &["nms", "--input", "bad.jsonl", "--output", "x", "--nms-thresh", "car"]);
    assert_eq!(bad_thresh.status.code(), Some(1));
    std::fs::write(
        dir.path().join("custom.jsonl"),
        r#"{"sequence":"a","frame":0,"category":"forklift","bbox":[0,0,1,1],"score":0.9,"embedding":[1]}"#,
    )
    .unwrap();
    let no_thresh = apptrack(dir.path(), &["nms", "--input", "custom.jsonl", "--output", "x"]);
    assert_eq!(no_thresh.status.code(), Some(1));
    let with_thresh = apptrack(
        dir.path(),
        &["nms", "--input", "custom.jsonl", "--output", "x", "--nms-thresh", "forklift=0.5"],
    );
    assert!(with_thresh.status.success());
}

#[test]
fn perfect_prediction_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let gt = parse_ground_truth(&dir.path().join("data/gt.jsonl")).unwrap();
    write_tracks(&dir.path().join("perfect.jsonl"), &gt.as_perfect_prediction()).unwrap();
    for iou in ["box", "mask"] {
        let out = apptrack(
            dir.path(),
            &["eval", "--gt", "data/gt.jsonl", "--tracks", "perfect.jsonl", "--iou", iou, "--report", "r.json"],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        for key in ["mHOTA", "mMOTA", "mIDF1", "mDetA", "mAssA"] {
            assert_eq!(report[key].as_f64(), Some(1.0), "{iou} {key}");
        }
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.starts_with("mHOTA"));
    }
}

#[test]
fn track_output_is_stable_and_exports_mot() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = |out: &'static str| {
        vec!["track", "--input", "data/detections.jsonl", "--output", out, "--high-thresh", "0.84", "--low-thresh", "0.3", "--apply-nms", "--mot-dir", "mot"]
    };
    assert!(apptrack(dir.path(), &args("a.jsonl")).status.success());
    assert!(apptrack(dir.path(), &args("b.jsonl")).status.success());
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let mot = std::fs::read_to_string(dir.path().join("mot/synth.txt")).unwrap();
    let first = mot.lines().next().unwrap();
    assert_eq!(first.split(',').count(), 10);
    assert!(first.ends_with(",-1,-1"));
    assert!(dir.path().join("mot/categories.txt").exists());
}
