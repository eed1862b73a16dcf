use stitch_core::eval::channel_means;
use stitch_core::io::{list_sequence, read_frame};
use stitch_core::synth::{synth_scene, Flicker, SynthSpec};
use stitch_core::{load_config, run_sequence, run_sequence_with, Frame, StitchConfig};

fn max_mean_jump(frames: &[Frame]) -> f64 {
    frames
        .windows(2)
        .map(|w| {
            let (a, b) = (channel_means(&w[0]), channel_means(&w[1]));
            (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn ten_frame_two_view_smoke_run() {
    let scene = synth_scene(&SynthSpec {
        seed: 11,
        frames: 10,
        noise: 1.0,
        casts: vec![[0.9, 1.0, 1.08], [1.0; 3]],
        parallax_depth: 0.3,
        baseline: 0.05,
        perturb: 0.02,
        motion: 0.5,
        ..SynthSpec::default()
    })
    .unwrap();
    let (out, report) = run_sequence(&scene.config, &scene.frames).unwrap();
    assert_eq!(out.len(), 10);
    assert_eq!(report.frames.len(), 10);
    let (w, h) = (report.canvas.width, report.canvas.height);
    assert!(w > 320 && h >= 240);
    assert!(out.iter().all(|f| f.width() == w && f.height() == h));
    assert!(report.calibration[0].refined, "{:?}", report.calibration[0]);
    assert!(report.fps() > 0.0);
    assert_eq!(report.frame_rows().len(), 10);
    for f in &report.frames {
        assert!(f.all_time >= f.stages.max());
        assert_eq!(f.pairs.len(), 1);
        assert!(f.pairs[0].window_len <= 3);
    }
    let text = serde_json::to_string(&report).unwrap();
    let back: stitch_core::RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.frames.len(), 10);
    assert_eq!(back.input_digest, report.input_digest);
}

#[test]
fn window_three_damps_a_flash_in_the_panorama() {
    let make = |window: usize| {
        let scene = synth_scene(&SynthSpec {
            seed: 12,
            width: 160,
            height: 120,
            frames: 8,
            noise: 1.0,
            casts: vec![[0.88, 1.0, 1.1], [1.0; 3]],
            flicker: vec![Flicker {
                view: 0,
                frame: 5,
                gain: [1.3; 3],
                band: Some((0.65, 0.85)),
            }],
            ..SynthSpec::default()
        })
        .unwrap();
        let mut cfg: StitchConfig = scene.config.clone();
        cfg.window = window;
        let (out, _) = run_sequence(&cfg, &scene.frames).unwrap();
        max_mean_jump(&out)
    };
    let (single, stacked) = (make(1), make(3));
    assert!(stacked < single, "window 3 jump {stacked} vs window 1 jump {single}");
}

#[test]
fn streaming_runner_matches_batch_runner() {
    let scene = synth_scene(&SynthSpec {
        seed: 13,
        width: 128,
        height: 96,
        frames: 4,
        noise: 1.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let (batch, _) = run_sequence(&scene.config, &scene.frames).unwrap();
    let mut streamed = Vec::new();
    let report = run_sequence_with(&scene.config, (0..4).map(|t| Ok(scene.frame_set(t))), |i, f| {
        assert_eq!(i as usize, streamed.len());
        streamed.push(f.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(streamed, batch);
    assert_eq!(report.frames.len(), 4);
}

#[test]
fn written_scene_runs_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(&SynthSpec {
        seed: 14,
        width: 128,
        height: 96,
        frames: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg_path = scene.write(dir.path()).unwrap();
    let cfg = load_config(&cfg_path).unwrap();
    let streams: Vec<Vec<Frame>> = cfg
        .views
        .iter()
        .map(|v| {
            let d = cfg_path.parent().unwrap().join(v.dir.as_ref().unwrap());
            list_sequence(&d)
                .unwrap()
                .iter()
                .map(|p| read_frame(p).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(streams, scene.frames);
    let (from_disk, _) = run_sequence(&cfg, &streams).unwrap();
    let (in_memory, _) = run_sequence(&scene.config, &scene.frames).unwrap();
    assert_eq!(from_disk, in_memory);
}

#[test]
fn sample_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sample_3view.json");
    let cfg = load_config(&path).unwrap();
    assert_eq!(cfg.views.len(), 3);
    assert_eq!(cfg.reference, 1);
    assert_eq!(cfg.threads, 4);
}
