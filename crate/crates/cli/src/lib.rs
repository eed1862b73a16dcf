//! `vstitch`: stitch, calibrate, evaluate and benchmark from the command
//! line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! runtime failures.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use stitch_core::eval::{compare_methods_with, mean_ssim, temporal_sigma, timing_table, write_csv, MetricRow};
use stitch_core::features::{keypoints_to_text, matches_to_text};
use stitch_core::io::{list_sequence, read_frame, SequenceReader, SequenceWriter};
use stitch_core::{
    load_config, run_sequence, run_sequence_observed, synth_scene, Flicker, Frame, PipelineState, StitchConfig,
    StitchError, SynthSpec,
};

pub use manifest::{config_stamp, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vstitch", version, about = "Multi-view video stitching")]
pub struct Cli {
    /// Override the seed of the configuration or synthetic scene.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the worker thread count (0 = every core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stitch every frame set and write panoramas plus a run report.
    Stitch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write keypoints and matches as text under out/features.
        #[arg(long)]
        dump_features: bool,
        /// Write each frame's flow fields as binary under out/flow.
        #[arg(long)]
        dump_flow: bool,
    },
    /// Refine the homographies on the first frame set and print them.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, requires = "out")]
        dump_features: bool,
    },
    /// Compare window-1 and window-3 color transfer on one view pair.
    Colorcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Non-reference view to correct; defaults to the first one.
        #[arg(long)]
        source: Option<usize>,
        /// Use at most this many frame sets.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Time the pipeline on one thread and on N threads.
    Bench {
        /// Frames on disk; without it a synthetic scene is rendered.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1280)]
        width: usize,
        #[arg(long, default_value_t = 720)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        frames: usize,
    },
    /// Render a synthetic scene with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        views: usize,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 240)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long, default_value_t = 0.4)]
        overlap: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        parallax: f64,
        #[arg(long, default_value_t = 0.0)]
        baseline: f64,
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
        #[arg(long, default_value_t = 0.0)]
        motion: f64,
        /// Per-view RGB gain `r,g,b`; repeat once per view.
        #[arg(long)]
        cast: Vec<String>,
        /// One-frame gain `view:frame:gain` or `view:frame:gain:x0:x1`.
        #[arg(long)]
        flicker: Vec<String>,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 1 if any cause is a configuration error, else 2.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let config = e.chain().any(|c| {
        c.downcast_ref::<StitchError>()
            .is_some_and(StitchError::is_config_error)
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Stitch {
            config,
            out,
            dump_features,
            dump_flow,
        } => stitch(cli, config, out, *dump_features, *dump_flow),
        Command::Calibrate {
            config,
            out,
            dump_features,
        } => calibrate(cli, config, out.as_deref(), *dump_features),
        Command::Colorcheck {
            config,
            out,
            source,
            frames,
        } => colorcheck(cli, config, out.as_deref(), *source, *frames),
        Command::Bench {
            config,
            out,
            width,
            height,
            frames,
        } => bench(cli, config.as_deref(), out.as_deref(), (*width, *height), *frames),
        Command::Synth { out, .. } => synth(cli, out),
    }
}

fn load(cli: &Cli, path: &Path) -> Result<StitchConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One lazy reader per view, checked for equal lengths.
fn open_readers(manifest: &RunManifest) -> Result<(Vec<SequenceReader>, usize)> {
    let readers = manifest
        .inputs
        .iter()
        .map(|d| SequenceReader::open(d))
        .collect::<stitch_core::Result<Vec<_>>>()?;
    let lens: Vec<usize> = readers.iter().map(SequenceReader::len).collect();
    if lens.iter().any(|&n| n != lens[0]) {
        return Err(StitchError::InputMismatch(format!("views hold different frame counts: {lens:?}")).into());
    }
    if lens[0] == 0 {
        return Err(StitchError::InputMismatch("no frames in the view directories".into()).into());
    }
    Ok((readers, lens[0]))
}

fn read_sets(manifest: &RunManifest, limit: Option<usize>) -> Result<Vec<Vec<Frame>>> {
    let mut per_view = Vec::with_capacity(manifest.inputs.len());
    for d in &manifest.inputs {
        let mut paths = list_sequence(d)?;
        if let Some(n) = limit {
            paths.truncate(n);
        }
        per_view.push(
            paths
                .iter()
                .map(|p| read_frame(p))
                .collect::<stitch_core::Result<Vec<_>>>()?,
        );
    }
    let n = per_view[0].len();
    if n == 0 || per_view.iter().any(|v| v.len() != n) {
        let lens: Vec<usize> = per_view.iter().map(Vec::len).collect();
        return Err(StitchError::InputMismatch(format!("views hold frame counts {lens:?}")).into());
    }
    Ok((0..n)
        .map(|t| per_view.iter().map(|v| v[t].clone()).collect())
        .collect())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_table<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(rows, std::io::BufWriter::new(file))?;
    Ok(())
}

fn dump_features(dir: &Path, frame: u64, state: &PipelineState) -> Result<()> {
    fs::create_dir_all(dir)?;
    for d in state.features() {
        let stem = format!("frame_{frame:06}_view{}", d.source);
        fs::write(
            dir.join(format!("{stem}_keypoints.txt")),
            keypoints_to_text(&d.source_keypoints),
        )?;
        fs::write(
            dir.join(format!("{stem}_reference_keypoints.txt")),
            keypoints_to_text(&d.reference_keypoints),
        )?;
        fs::write(dir.join(format!("{stem}_matches.txt")), matches_to_text(&d.matches))?;
    }
    Ok(())
}

fn stitch(cli: &Cli, config_path: &Path, out: &Path, features: bool, flow: bool) -> Result<()> {
    let cfg = load(cli, config_path)?;
    let manifest = RunManifest::resolve(config_path, &cfg, Some(out), "stitch")?;
    let (readers, n) = open_readers(&manifest)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("manifest.json"), &manifest)?;

    let mut readers = readers;
    let sets = (0..n).map(move |_| {
        readers
            .iter_mut()
            .map(|r| r.next().expect("reader lengths were checked"))
            .collect::<stitch_core::Result<Vec<_>>>()
    });
    let mut writer = SequenceWriter::create(out, "pano_", "png")?;
    let every = if cfg.refine.enabled { cfg.refine.every } else { 0 };
    let report = run_sequence_observed(&cfg, sets, |state, frame, pano| {
        writer.write(pano)?;
        let recalibrated = frame.frame == 0 || (every > 0 && frame.frame % every == 0);
        if features && recalibrated {
            dump_features(&out.join("features"), frame.frame, state).map_err(io_error)?;
        }
        if flow {
            let dir = out.join("flow");
            fs::create_dir_all(&dir)?;
            for (v, f) in state.last_flows() {
                fs::write(
                    dir.join(format!("frame_{:06}_view{v}.flo", frame.frame)),
                    f.to_le_bytes(),
                )?;
            }
        }
        Ok(())
    })?;
    write_table(&out.join("report.csv"), &report.frame_rows())?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "stitched {} frames ({}x{}) at {:.2} fps into {} [config {}]",
        report.frames.len(),
        report.canvas.width,
        report.canvas.height,
        report.fps(),
        out.display(),
        config_stamp(&cfg)
    );
    for c in &report.calibration {
        if let Some(w) = &c.warning {
            println!("view {}: camera homography kept: {w}", c.source);
        }
    }
    Ok(())
}

fn io_error(e: anyhow::Error) -> StitchError {
    StitchError::Io(std::io::Error::other(format!("{e:#}")))
}

fn calibrate(cli: &Cli, config_path: &Path, out: Option<&Path>, features: bool) -> Result<()> {
    let cfg = load(cli, config_path)?;
    let manifest = RunManifest::resolve(config_path, &cfg, out, "calibrate")?;
    let set = read_sets(&manifest, Some(1))?.remove(0);
    let state = PipelineState::initialize(&cfg, &set)?;
    let summary = serde_json::json!({
        "config": config_stamp(&cfg),
        "canvas": state.canvas(),
        "calibration": state.calibration(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("calibration_{}.json", config_stamp(&cfg))), &summary)?;
        if features {
            dump_features(&dir.join("features"), 0, &state)?;
        }
    }
    Ok(())
}

fn colorcheck(
    cli: &Cli,
    config_path: &Path,
    out: Option<&Path>,
    source: Option<usize>,
    frames: Option<usize>,
) -> Result<()> {
    let cfg = load(cli, config_path)?;
    let manifest = RunManifest::resolve(config_path, &cfg, out, "colorcheck")?;
    let sets = read_sets(&manifest, frames)?;
    if sets.len() < 2 {
        bail!(StitchError::InputMismatch(format!(
            "colorcheck needs at least 2 frame sets, got {}",
            sets.len()
        )));
    }
    let source = source.unwrap_or(if cfg.reference == 0 { 1 } else { 0 });
    let state = PipelineState::initialize(&cfg, &sets[0])?;
    let scene = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let seq = state.color_sequence(&sets, source, &scene)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    for window in [1, 3] {
        let r = compare_methods_with(&seq, window, cfg.transfer_mode)?;
        println!(
            "window-{window}: temporal sigma {:.6}, mean SSIM {:.6}",
            temporal_sigma(&r),
            mean_ssim(&r)
        );
        rows.extend(r);
    }
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_table(&dir.join(format!("colorcheck_{}.csv", config_stamp(&cfg))), &rows)?;
    }
    Ok(())
}

fn bench(cli: &Cli, config_path: Option<&Path>, out: Option<&Path>, size: (usize, usize), frames: usize) -> Result<()> {
    let (cfg, streams, scene) = match config_path {
        Some(p) => {
            let cfg = load(cli, p)?;
            let manifest = RunManifest::resolve(p, &cfg, out, "bench")?;
            let sets = read_sets(&manifest, Some(frames))?;
            let streams: Vec<Vec<Frame>> = (0..cfg.views.len())
                .map(|v| sets.iter().map(|s| s[v].clone()).collect())
                .collect();
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (cfg, streams, name)
        }
        None => {
            let spec = SynthSpec {
                seed: cli.seed.unwrap_or(0),
                width: size.0,
                height: size.1,
                frames,
                noise: 1.0,
                casts: vec![[0.9, 1.0, 1.08], [1.0; 3]],
                ..SynthSpec::default()
            };
            let s = synth_scene(&spec)?;
            (s.config, s.frames, format!("synth-{}x{}", size.0, size.1))
        }
    };
    let parallel_threads = match cli.threads.unwrap_or(0) {
        0 => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .max(2),
        t => t,
    };
    let mut single_cfg = cfg.clone();
    single_cfg.threads = 1;
    let mut parallel_cfg = cfg.clone();
    parallel_cfg.threads = parallel_threads;
    let (a, single) = run_sequence(&single_cfg, &streams)?;
    let (b, parallel) = run_sequence(&parallel_cfg, &streams)?;
    if a != b {
        bail!("panoramas differ between 1 and {parallel_threads} threads");
    }
    let rows = timing_table(&single.summary(&scene), &parallel.summary(&scene))?;
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!(
        "{} frames, 1 vs {parallel_threads} threads: {:.2}x, {:.2} fps parallel",
        streams[0].len(),
        rows[1].speedup_ratio,
        parallel.fps()
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_table(&dir.join(format!("timing_{}.csv", config_stamp(&cfg))), &rows)?;
    }
    Ok(())
}

fn parse_floats(text: &str, sep: char) -> Option<Vec<f64>> {
    text.split(sep).map(|s| s.trim().parse().ok()).collect()
}

fn usage(path: &str, message: String) -> anyhow::Error {
    StitchError::Config {
        path: path.into(),
        message,
    }
    .into()
}

/// Scene spec from the `synth` arguments.
fn synth_spec(cli: &Cli) -> Result<SynthSpec> {
    let Command::Synth {
        views,
        width,
        height,
        frames,
        overlap,
        noise,
        parallax,
        baseline,
        perturb,
        motion,
        cast,
        flicker,
        ..
    } = &cli.command
    else {
        unreachable!("synth_spec is only called for the synth subcommand");
    };
    let casts = cast
        .iter()
        .map(|c| match parse_floats(c, ',').as_deref() {
            Some(&[r, g, b]) => Ok([r, g, b]),
            _ => Err(usage("--cast", format!("expected r,g,b, got `{c}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let flicker = flicker
        .iter()
        .map(|f| {
            let bad = || usage("--flicker", format!("expected view:frame:gain[:x0:x1], got `{f}`"));
            let v = parse_floats(f, ':').ok_or_else(bad)?;
            let index = |x: f64| (x >= 0.0 && x.fract() == 0.0).then_some(x as usize).ok_or_else(bad);
            let band = match v.len() {
                3 => None,
                5 => Some((v[3], v[4])),
                _ => return Err(bad()),
            };
            Ok(Flicker {
                view: index(v[0])?,
                frame: index(v[1])?,
                gain: [v[2]; 3],
                band,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthSpec {
        seed: cli.seed.unwrap_or(0),
        views: *views,
        width: *width,
        height: *height,
        frames: *frames,
        overlap: *overlap,
        casts,
        flicker,
        parallax_depth: *parallax,
        baseline: *baseline,
        noise: *noise,
        perturb: *perturb,
        motion: *motion,
        ..SynthSpec::default()
    })
}

fn synth(cli: &Cli, out: &Path) -> Result<()> {
    let spec = synth_spec(cli)?;
    let mut scene = synth_scene(&spec)?;
    if let Some(t) = cli.threads {
        scene.config.threads = t;
    }
    let path = scene.write(out)?;
    println!("{}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("vstitch").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = parse(&[
            "stitch",
            "--config",
            "c.json",
            "--out",
            "o",
            "--seed",
            "9",
            "--threads",
            "3",
        ]);
        assert_eq!((cli.seed, cli.threads), (Some(9), Some(3)));
        assert!(matches!(cli.command, Command::Stitch { dump_flow: false, .. }));
    }

    #[test]
    fn cast_and_flicker_values_parse() {
        let cli = parse(&[
            "synth",
            "--out",
            "o",
            "--cast",
            "0.9,1,1.1",
            "--cast",
            "1,1,1",
            "--flicker",
            "0:2:1.3",
            "--flicker",
            "1:3:0.7:0.6:0.8",
        ]);
        let s = synth_spec(&cli).unwrap();
        assert_eq!(s.casts, vec![[0.9, 1.0, 1.1], [1.0; 3]]);
        assert_eq!(
            s.flicker[0],
            Flicker {
                view: 0,
                frame: 2,
                gain: [1.3; 3],
                band: None
            }
        );
        assert_eq!(s.flicker[1].band, Some((0.6, 0.8)));
    }

    #[test]
    fn malformed_synth_values_are_config_errors() {
        for args in [["--cast", "1,2"], ["--flicker", "0:x:1"], ["--flicker", "0.5:1:1"]] {
            let cli = parse(&["synth", "--out", "o", args[0], args[1]]);
            let e = synth_spec(&cli).unwrap_err();
            assert_eq!(exit_code(&e), EXIT_CONFIG, "{args:?}");
        }
    }

    #[test]
    fn runtime_errors_map_to_two() {
        let e = anyhow::Error::from(StitchError::EmptyHistogram).context("balancing");
        assert_eq!(exit_code(&e), EXIT_RUNTIME);
        let e = anyhow::Error::from(StitchError::NoOverlap).context("initializing");
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }

    #[test]
    fn calibrate_dump_requires_out() {
        assert!(Cli::try_parse_from(["vstitch", "calibrate", "--config", "c.json", "--dump-features"]).is_err());
    }
}
