use std::path::Path;
use std::process::{Command, Output};

fn posetrack(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posetrack"))
        .args(args)
        .current_dir(cwd)
        .env_remove("POSETRACK_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn csv_rows(p: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

/// Three frames, one person, constant geometry; `ids` gives the predicted
/// track id per frame.
fn fixture(dir: &Path, ids: [u64; 3]) {
    let kps = |score: f64| {
        (0..15).map(|j| format!("[{}, {}, {score}, 1]", 100 + 5 * j, 100 + 10 * j)).collect::<Vec<_>>().join(", ")
    };
    let seq = |gt: bool| {
        let frames: Vec<String> = (0..3)
            .map(|t| {
                let extra = if gt {
                    r#", "track_id": 0, "head_box": [100, 80, 130, 120]"#.to_string()
                } else {
                    format!(r#", "track_id": {}"#, ids[t])
                };
                format!(
                    r#"{{"frame_index": {t}, "labeled": true, "detections": [{{"bbox": [90, 90, 190, 260], "score": 1.0, "keypoints": [{}]{extra}}}]}}"#,
                    kps(if gt { 1.0 } else { 3.0 })
                )
            })
            .collect();
        format!(
            r#"{{"video_id": "fix", "image_size": [640, 480], "joint_names": [{}], "frames": [{}]}}"#,
            (0..15).map(|j| format!("\"j{j}\"")).collect::<Vec<_>>().join(", "),
            frames.join(", ")
        )
    };
    std::fs::write(dir.join("gt.json"), seq(true)).unwrap();
    std::fs::write(dir.join("pred.json"), seq(false)).unwrap();
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&posetrack(&["synth", "--out", out, "--seed", "1", "--frames", "8"], dir.path()));
    }
    for sub in ["gt/synth-1.json", "pred/synth-1.json"] {
        assert_eq!(read(dir.path().join("a").join(sub)), read(dir.path().join("b").join(sub)));
    }
    assert!(dir.path().join("a.manifest.json").exists());
}

#[test]
fn noiseless_pipeline_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&posetrack(
        &["synth", "--out", "s", "--noiseless", "--layout", "columns", "--videos", "3", "--frames", "20"],
        d,
    ));
    ok(&posetrack(&["track", "--pred", "s/pred", "--out", "tracked"], d));
    for name in ["synth-0.json", "synth-1.json", "synth-2.json"] {
        let v: serde_json::Value = serde_json::from_slice(&read(d.join("tracked").join(name))).unwrap();
        for f in v["frames"].as_array().unwrap() {
            for det in f["detections"].as_array().unwrap() {
                assert!(det["track_id"].is_u64());
            }
        }
    }
    assert!(d.join("tracked.manifest.json").exists());
    let stdout = ok(&posetrack(&["eval", "--gt", "s/gt", "--pred", "tracked", "--report", "r.json"], d));
    assert_eq!(stdout.trim(), "mAP 100.0 | MOTA 100.0 | MOTP 100.0 | Prec 100.0 | Rec 100.0");
    let report: serde_json::Value = serde_json::from_slice(&read(d.join("r.json"))).unwrap();
    assert_eq!(report["mota_total"], 100.0);
    assert!(d.join("r.json.manifest.json").exists());
}

#[test]
fn random_tracking_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&posetrack(&["synth", "--out", "s", "--seed", "3", "--frames", "10"], d));
    for out in ["r1.json", "r2.json"] {
        ok(&posetrack(&["track", "--pred", "s/pred/synth-3.json", "--out", out, "--algo", "random", "--seed", "7"], d));
    }
    assert_eq!(read(d.join("r1.json")), read(d.join("r2.json")));
}

#[test]
fn feature_cost_without_features_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), [0, 0, 0]);
    let out = posetrack(
        &["track", "--pred", "pred.json", "--out", "t.json", "--cost", "feat", "--kp-thresh", "0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("feature"), "{err}");
    assert!(!dir.path().join("t.json").exists());
}

#[test]
fn id_switch_fixture_reports_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), [0, 0, 1]);
    let stdout = ok(&posetrack(
        &["eval", "--gt", "gt.json", "--pred", "pred.json", "--report", "r.json", "--csv", "r.csv"],
        dir.path(),
    ));
    assert!(stdout.contains("MOTA 66.7"), "{stdout}");
    let (header, rows) = csv_rows(dir.path().join("r.csv"));
    assert_eq!(header.len(), 19);
    assert_eq!(column(&header, &rows, "MOTA Total"), vec![66.7]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(posetrack(&["eval", "--pred", "p.json", "--report", "r.json"], d).status.code(), Some(2));
    assert_eq!(posetrack(&["sweep", "--gt", "g", "--pred", "p", "--out", "o.csv"], d).status.code(), Some(2));
    assert_eq!(
        posetrack(&["sweep", "--gt", "g", "--pred", "p", "--out", "o.csv", "--thresholds", ""], d).status.code(),
        Some(2)
    );
    assert_eq!(posetrack(&["track", "--pred", "p", "--out", "o", "--algo", "nope"], d).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    let out = posetrack(&["track", "--pred", "bad.json", "--out", "o.json"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    assert_eq!(posetrack(&["track", "--pred", "missing.json", "--out", "o.json"], d).status.code(), Some(1));

    // untracked predictions cannot be evaluated
    fixture(d, [0, 0, 0]);
    ok(&posetrack(&["synth", "--out", "s", "--frames", "3"], d));
    let out =
        posetrack(&["eval", "--gt", "s/gt/synth-0.json", "--pred", "s/pred/synth-0.json", "--report", "r.json"], d);
    assert_eq!(out.status.code(), Some(1));
    let out = posetrack(&["eval", "--gt", "gt.json", "--pred", "s/gt/synth-0.json", "--report", "r.json"], d);
    assert_eq!(out.status.code(), Some(1));
}

fn noisy_suite(d: &Path) {
    let cfg = r#"{"frames": 30, "actors": 6, "noise": {"false_positive_rate": 3.0, "tp_score": [0.95, 1.0], "hard_fraction": 0.25}}"#;
    std::fs::write(d.join("scenario.json"), cfg).unwrap();
    ok(&posetrack(&["synth", "--out", "s", "--config", "scenario.json", "--videos", "3", "--seed", "4"], d));
}

#[test]
fn threshold_sweep_trend() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    noisy_suite(d);
    ok(&posetrack(
        &[
            "sweep",
            "--gt",
            "s/gt",
            "--pred",
            "s/pred",
            "--out",
            "sweep.csv",
            "--thresholds",
            "0,0.5,0.95",
            "--kp-thresh",
            "0",
        ],
        d,
    ));
    let (header, rows) = csv_rows(d.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(&header[..6], &["det_thresh", "kp_thresh", "algo", "cost", "lookback", "matched_cost"]);
    let mota = column(&header, &rows, "MOTA Total");
    let recall = column(&header, &rows, "Rec Total");
    assert!(mota.windows(2).all(|w| w[0] <= w[1]), "{mota:?}");
    assert!(recall.windows(2).all(|w| w[0] >= w[1]), "{recall:?}");
    assert!(d.join("sweep.csv.manifest.json").exists());
}

#[test]
fn hungarian_matched_cost_at_most_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    noisy_suite(d);
    ok(&posetrack(
        &[
            "sweep",
            "--gt",
            "s/gt",
            "--pred",
            "s/pred",
            "--out",
            "a.csv",
            "--algos",
            "hungarian,greedy",
            "--costs",
            "iou,combined",
            "--det-thresh",
            "0",
        ],
        d,
    ));
    let (header, rows) = csv_rows(d.join("a.csv"));
    assert_eq!(rows.len(), 4);
    let cost = column(&header, &rows, "matched_cost");
    // rows: (hungarian, iou), (hungarian, combined), (greedy, iou), (greedy, combined)
    assert!(cost[0] <= cost[2] && cost[1] <= cost[3], "{cost:?}");
}

#[test]
fn keypoint_oracle_does_not_lower_mota() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    noisy_suite(d);
    ok(&posetrack(&["track", "--pred", "s/pred", "--out", "t", "--det-thresh", "0.5", "--kp-thresh", "0"], d));
    ok(&posetrack(&["oracle", "--gt", "s/gt", "--pred", "t", "--out", "o", "--mode", "kpts"], d));
    ok(&posetrack(&["eval", "--gt", "s/gt", "--pred", "t", "--report", "raw.json"], d));
    ok(&posetrack(&["eval", "--gt", "s/gt", "--pred", "o", "--report", "kpts.json"], d));
    let mota = |f: &str| {
        let v: serde_json::Value = serde_json::from_slice(&read(d.join(f))).unwrap();
        v["mota_total"].as_f64().unwrap()
    };
    assert!(mota("kpts.json") >= mota("raw.json"));
    assert!(d.join("o.manifest.json").exists());
}

#[test]
fn bench_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&posetrack(
        &["bench", "--frames", "20,40", "--actors", "3", "--repeats", "3", "--out", "b.json"],
        dir.path(),
    ));
    assert!(stdout.contains("R^2"), "{stdout}");
    let v: serde_json::Value = serde_json::from_slice(&read(dir.path().join("b.json"))).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn anchors_count() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&posetrack(&["anchors", "--width", "64", "--height", "48"], dir.path()));
    assert!(stdout.starts_with("576 anchors"), "{stdout}");
}

#[test]
fn thread_env_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_posetrack"))
        .args(["anchors", "--width", "8", "--height", "8"])
        .env("POSETRACK_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_posetrack"))
        .args(["anchors", "--width", "8", "--height", "8"])
        .env("POSETRACK_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
}
