use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vstitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vstitch")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["synth", "--out", s(dir), "--frames", "3", "--noise", "1", "--seed", "4"];
    args.extend_from_slice(extra);
    let o = vstitch(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("config.json")
}

#[test]
fn help_exits_zero() {
    let o = vstitch(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["stitch", "calibrate", "colorcheck", "bench", "synth"] {
        assert!(text.contains(cmd), "{text}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = vstitch(&["stitch", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "views": [ { "camera": { "fy": 1, "cx": 0, "cy": 0 } } ] }"#).unwrap();
    let out = dir.path().join("out");
    let o = vstitch(&["stitch", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fx"));
    let o = vstitch(&[
        "stitch",
        "--config",
        s(&dir.path().join("missing.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreadable_frame_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    fs::write(dir.path().join("view0/frame_000001.png"), b"not a png").unwrap();
    let o = vstitch(&["stitch", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_then_stitch_writes_panoramas_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &["--cast", "0.9,1,1.1", "--cast", "1,1,1"]);
    let out = dir.path().join("out");
    let o = vstitch(&[
        "stitch",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--dump-features",
        "--dump-flow",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for t in 0..3 {
        assert!(out.join(format!("pano_{t:06}.png")).is_file());
        let flo = fs::read(out.join(format!("flow/frame_{t:06}_view0.flo"))).unwrap();
        let w = u32::from_le_bytes(flo[..4].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(flo[4..8].try_into().unwrap()) as usize;
        assert_eq!(flo.len(), 8 + 8 * w * h);
    }
    let kp = fs::read_to_string(out.join("features/frame_000000_view0_keypoints.txt")).unwrap();
    assert!(kp.lines().count() > 10);
    assert!(kp.lines().all(|l| l.split(' ').count() == 4));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"].as_array().unwrap().len(), 3);
    assert_eq!(report["calibration"][0]["homography"].as_array().unwrap().len(), 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "stitch");
}

#[test]
fn same_argv_gives_identical_panoramas_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = vstitch(&["stitch", "--config", s(&cfg), "--out", s(out), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0));
    }
    for t in 0..3 {
        let name = format!("pano_{t:06}.png");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn calibrate_colorcheck_and_bench_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(
        dir.path(),
        &["--perturb", "0.02", "--cast", "0.85,1,1.1", "--cast", "1,1,1"],
    );
    let out = dir.path().join("out");

    let o = vstitch(&["calibrate", "--config", s(&cfg), "--out", s(&out), "--dump-features"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cal: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cal["calibration"][0]["refined"], true);
    let stamp = cal["config"].as_str().unwrap();
    assert!(out.join(format!("calibration_{stamp}.json")).is_file());
    assert!(out.join("features/frame_000000_view0_matches.txt").is_file());

    let o = vstitch(&["colorcheck", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join(format!("colorcheck_{stamp}.csv"))).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * (3 + 2));
    assert!(table.contains("window-1") && table.contains("window-3"));

    let o = vstitch(&["bench", "--config", s(&cfg), "--out", s(&out), "--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let timing = fs::read_to_string(out.join(format!("timing_{stamp}.csv"))).unwrap();
    assert!(timing.starts_with("Scene,Implementation,Threads,Geometric Warping"));
    assert_eq!(timing.lines().count(), 3);
}

#[test]
fn colorcheck_rejects_the_reference_as_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), &[]);
    let o = vstitch(&["colorcheck", "--config", s(&cfg), "--source", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
