//! Per-frame orchestration: pre-warp, color correction, flow-based local
//! warping, fusion and global balancing, with all temporal state owned here.
//!
//! Frames are processed strictly in order. Work inside a frame runs on a
//! private thread pool; every parallel section writes disjoint rows or keeps
//! a fixed reduction order, so output does not depend on the thread count.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blend::{blend_weights, compose_panorama, flow_fuse, BlendWeights, FusedOverlap};
use crate::color_balance::{apply_balance, build_curve, find_thresholds, BalanceThresholds, ThresholdHistory};
use crate::color_transfer::{transfer_fit, TransferFit, TransferWindow};
use crate::config::StitchConfig;
use crate::error::{Result, StitchError};
use crate::eval::{ColorSequence, StageTimes, TimingSummary};
use crate::features::{
    describe, detect, match_features, ransac_scale_translation, DetectorConfig, Keypoint, MatchPair, RansacConfig,
};
use crate::flow::{dense_flow, FlowField};
use crate::frame::{Frame, Region};
use crate::geometry::{
    broaden, compute_canvas, fit_refinement, overlap_regions, pairwise_homography, planar_homography,
    refine_homography, warp_frame, Canvas, Homography, Overlap,
};
use crate::histogram::frame_histogram;

/// Strongest keypoints kept per image for matching.
pub const MAX_KEYPOINTS: usize = 1000;

/// Outcome of refining one pair's homography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub source: usize,
    pub reference: usize,
    pub refined: bool,
    pub keypoints: (usize, usize),
    pub matches: usize,
    pub inliers: usize,
    /// Why the camera homography was kept, when it was.
    pub warning: Option<String>,
    /// Source-to-reference homography in use, 8 entries after normalisation.
    pub homography: [f64; 8],
}

/// Keypoints and matches of the most recent refinement of one pair, in
/// canvas coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureDump {
    pub source: usize,
    pub source_keypoints: Vec<Keypoint>,
    pub reference_keypoints: Vec<Keypoint>,
    pub matches: Vec<MatchPair>,
}

/// A non-reference view together with the reference.
#[derive(Debug, Clone)]
struct PairState {
    source: usize,
    window: TransferWindow,
    overlap: Overlap,
    weights: BlendWeights,
}

#[derive(Clone)]
pub struct PipelineState {
    config: StitchConfig,
    frame_size: (usize, usize),
    canvas: Canvas,
    to_reference: Vec<Homography>,
    pairs: Vec<PairState>,
    thresholds: ThresholdHistory,
    frame_index: u64,
    calibration: Vec<Calibration>,
    features: Vec<FeatureDump>,
    /// `flow_ij` of each pair from the last processed frame.
    last_flows: Vec<(usize, FlowField)>,
    pool: Arc<ThreadPool>,
}

impl std::fmt::Debug for PipelineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PipelineState")
            .field("canvas", &self.canvas)
            .field("frame_index", &self.frame_index)
            .field("threads", &self.pool.current_num_threads())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub source: usize,
    /// Color matrix, row-major.
    pub matrix: [f64; 9],
    pub matrix_degraded: bool,
    pub window_len: usize,
    pub max_flow: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: u64,
    /// Seconds spent in each stage.
    pub stages: StageTimes,
    pub all_time: f64,
    pub pairs: Vec<PairReport>,
    /// Raw thresholds of this frame.
    pub thresholds: BalanceThresholds,
    /// Thresholds after temporal smoothing.
    pub smoothed: BalanceThresholds,
    /// Non-fatal stage failures, e.g. a rank-deficient fit or a too-small
    /// overlap for flow.
    pub degradations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub input_digest: String,
    pub threads: usize,
    pub canvas: Canvas,
    pub calibration: Vec<Calibration>,
    pub initialize_seconds: f64,
    pub frames: Vec<FrameReport>,
}

impl RunReport {
    /// Mean per-frame stage times.
    pub fn summary(&self, scene: &str) -> TimingSummary {
        let n = self.frames.len().max(1) as f64;
        let mut s = StageTimes::default();
        let mut all = 0.0;
        for f in &self.frames {
            s.geometric_warping += f.stages.geometric_warping / n;
            s.color_correction += f.stages.color_correction / n;
            s.local_warping += f.stages.local_warping / n;
            s.image_blending += f.stages.image_blending / n;
            s.color_balancing += f.stages.color_balancing / n;
            all += f.all_time / n;
        }
        TimingSummary {
            scene: scene.to_string(),
            threads: self.threads,
            frames: self.frames.len(),
            input_digest: self.input_digest.clone(),
            stages: s,
            all_time: all,
        }
    }

    pub fn fps(&self) -> f64 {
        let total: f64 = self.frames.iter().map(|f| f.all_time).sum();
        if total > 0.0 {
            self.frames.len() as f64 / total
        } else {
            0.0
        }
    }

    /// Flat per-frame rows for CSV output.
    pub fn frame_rows(&self) -> Vec<FrameRow> {
        self.frames
            .iter()
            .map(|f| FrameRow {
                frame: f.frame,
                geometric_warping: f.stages.geometric_warping,
                color_correction: f.stages.color_correction,
                local_warping: f.stages.local_warping,
                image_blending: f.stages.image_blending,
                color_balancing: f.stages.color_balancing,
                all_time: f.all_time,
                m1: format!("{}/{}/{}", f.smoothed.m1[0], f.smoothed.m1[1], f.smoothed.m1[2]),
                m2: format!("{}/{}/{}", f.smoothed.m2[0], f.smoothed.m2[1], f.smoothed.m2[2]),
                degradations: f.degradations.join("; "),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    #[serde(rename = "Frame")]
    pub frame: u64,
    #[serde(rename = "Geometric Warping")]
    pub geometric_warping: f64,
    #[serde(rename = "Color Correction")]
    pub color_correction: f64,
    #[serde(rename = "Local Warping")]
    pub local_warping: f64,
    #[serde(rename = "Image Blending")]
    pub image_blending: f64,
    #[serde(rename = "Color Balancing")]
    pub color_balancing: f64,
    #[serde(rename = "All time")]
    pub all_time: f64,
    pub m1: String,
    pub m2: String,
    pub degradations: String,
}

fn build_pool(threads: usize) -> Result<Arc<ThreadPool>> {
    ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map(Arc::new)
        .map_err(|e| StitchError::config("threads", e.to_string()))
}

fn check_frames(config: &StitchConfig, frames: &[Frame]) -> Result<(usize, usize)> {
    if frames.len() != config.views.len() {
        return Err(StitchError::InputMismatch(format!(
            "{} frames for {} views",
            frames.len(),
            config.views.len()
        )));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(StitchError::InputMismatch("views differ in frame size".into()));
    }
    Ok((w, h))
}

fn strongest(mut kps: Vec<Keypoint>) -> Vec<Keypoint> {
    kps.truncate(MAX_KEYPOINTS);
    kps
}

/// Feature-based refinement of `to_reference[source]`.
fn refine_pair(
    config: &StitchConfig,
    source: usize,
    h: &Homography,
    warped_src: &Frame,
    warped_ref: &Frame,
    overlap: &Overlap,
    canvas: &Canvas,
) -> (Calibration, FeatureDump) {
    let reference = config.reference;
    let mut dump = FeatureDump {
        source,
        ..FeatureDump::default()
    };
    let mut cal = Calibration {
        source,
        reference,
        refined: false,
        keypoints: (0, 0),
        matches: 0,
        inliers: 0,
        warning: None,
        homography: h.eight(),
    };
    let region = broaden(&overlap.region, config.refine.margin, &canvas.bounds());
    let det = DetectorConfig::default();
    let kps = detect(warped_src, &region, &det).and_then(|a| Ok((a, detect(warped_ref, &region, &det)?)));
    let (ka, kb) = match kps {
        Ok((a, b)) => (strongest(a), strongest(b)),
        Err(e) => {
            cal.warning = Some(e.to_string());
            return (cal, dump);
        }
    };
    cal.keypoints = (ka.len(), kb.len());
    let (da, db) = (describe(warped_src, &ka), describe(warped_ref, &kb));
    let matches = match_features(&ka, &da, &kb, &db, config.refine.ratio);
    cal.matches = matches.len();
    let seed = config.seed ^ (source as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    match refine_from_matches(h, &matches, canvas, &config.refine.ransac, seed) {
        Ok((refined, inliers)) => {
            cal.inliers = inliers;
            cal.refined = true;
            cal.homography = refined.eight();
        }
        Err(e) => cal.warning = Some(e.to_string()),
    }
    dump.source_keypoints = ka;
    dump.reference_keypoints = kb;
    dump.matches = matches;
    (cal, dump)
}

/// Consensus filtering of canvas-space matches followed by the exact
/// `T H S` refit. Returns the refined homography and the inlier count.
pub fn refine_from_matches(
    h: &Homography,
    matches: &[MatchPair],
    canvas: &Canvas,
    ransac: &RansacConfig,
    seed: u64,
) -> Result<(Homography, usize)> {
    let fit = ransac_scale_translation(matches, ransac, seed)?;
    Ok((refit_exact(h, &fit.inliers, canvas)?, fit.inliers.len()))
}

/// Fit `T H S` from source-image positions to reference-image positions of
/// the consensus matches.
fn refit_exact(h: &Homography, inliers: &[MatchPair], canvas: &Canvas) -> Result<Homography> {
    let inv = h.inverse()?;
    let (ox, oy) = (canvas.offset_x as f64, canvas.offset_y as f64);
    let mut src = Vec::with_capacity(inliers.len());
    let mut dst = Vec::with_capacity(inliers.len());
    for m in inliers {
        if let Some(p) = inv.apply(m.a.0 - ox, m.a.1 - oy) {
            src.push(p);
            dst.push((m.b.0 - ox, m.b.1 - oy));
        }
    }
    let params = fit_refinement(h, &src, &dst)?;
    refine_homography(h, &params)
}

impl PipelineState {
    /// Camera homographies, canvas, overlap refinement and blend weights.
    pub fn initialize(config: &StitchConfig, frames: &[Frame]) -> Result<PipelineState> {
        config.validate()?;
        let size = check_frames(config, frames)?;
        let pool = build_pool(config.resolved_threads())?;
        let planar: Vec<Homography> = config
            .views
            .iter()
            .map(|v| planar_homography(&v.camera.intrinsics, &v.camera.extrinsics))
            .collect::<Result<_>>()?;
        let camera_h: Vec<Homography> = planar
            .iter()
            .map(|h| pairwise_homography(&planar[config.reference], h))
            .collect::<Result<_>>()?;
        let mut state = PipelineState {
            config: config.clone(),
            frame_size: size,
            canvas: Canvas::for_frame(size.0, size.1),
            to_reference: camera_h,
            pairs: Vec::new(),
            thresholds: ThresholdHistory::default(),
            frame_index: 0,
            calibration: Vec::new(),
            features: Vec::new(),
            last_flows: Vec::new(),
            pool,
        };
        let pool = state.pool.clone();
        pool.install(|| state.calibrate(frames, true))?;
        Ok(state)
    }

    /// Refine the homographies from `frames` and rebuild overlaps and
    /// weights. The canvas is recomputed only when `new_canvas` is set.
    fn calibrate(&mut self, frames: &[Frame], new_canvas: bool) -> Result<()> {
        let cfg = &self.config;
        let sizes = vec![self.frame_size; frames.len()];
        if new_canvas {
            self.canvas = compute_canvas(&self.to_reference, &sizes)?;
        }
        let warped = self.warp_all(frames)?;
        let reference = cfg.reference;
        let sources: Vec<usize> = (0..frames.len()).filter(|&v| v != reference).collect();
        let mut calibration = Vec::with_capacity(sources.len());
        let mut features = Vec::with_capacity(sources.len());
        for &s in &sources {
            let (w, h) = (self.canvas.width, self.canvas.height);
            let overlap = overlap_regions(&warped[s].mask_or_full(), &warped[reference].mask_or_full(), w, h)?;
            let (cal, dump) = if cfg.refine.enabled {
                refine_pair(
                    cfg,
                    s,
                    &self.to_reference[s],
                    &warped[s],
                    &warped[reference],
                    &overlap,
                    &self.canvas,
                )
            } else {
                let cal = Calibration {
                    source: s,
                    reference,
                    refined: false,
                    keypoints: (0, 0),
                    matches: 0,
                    inliers: 0,
                    warning: Some("refinement disabled".into()),
                    homography: self.to_reference[s].eight(),
                };
                (
                    cal,
                    FeatureDump {
                        source: s,
                        ..FeatureDump::default()
                    },
                )
            };
            if cal.refined {
                let e = cal.homography;
                self.to_reference[s] = Homography::from_rows(
                    [[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], 1.0]],
                    crate::geometry::Provenance::Refined,
                );
            }
            calibration.push(cal);
            features.push(dump);
        }
        if new_canvas && calibration.iter().any(|c| c.refined) {
            self.canvas = compute_canvas(&self.to_reference, &sizes)?;
        }
        let warped = self.warp_all(frames)?;
        let (w, h) = (self.canvas.width, self.canvas.height);
        let mut pairs = Vec::with_capacity(sources.len());
        for &s in &sources {
            let (mi, mj) = (warped[s].mask_or_full(), warped[reference].mask_or_full());
            let overlap = overlap_regions(&mi, &mj, w, h)?;
            let weights = blend_weights(&mi, &mj, w, h, &overlap)?;
            let window = self
                .pairs
                .iter()
                .find(|p| p.source == s)
                .map(|p| p.window.clone())
                .unwrap_or_else(|| TransferWindow::new(self.config.window));
            pairs.push(PairState {
                source: s,
                window,
                overlap,
                weights,
            });
        }
        self.pairs = pairs;
        self.calibration = calibration;
        self.features = features;
        Ok(())
    }

    fn warp_all(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        frames
            .par_iter()
            .zip(&self.to_reference)
            .map(|(f, h)| warp_frame(f, h, &self.canvas))
            .collect()
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn homographies(&self) -> &[Homography] {
        &self.to_reference
    }

    pub fn calibration(&self) -> &[Calibration] {
        &self.calibration
    }

    /// Keypoints and matches from the most recent calibration.
    pub fn features(&self) -> &[FeatureDump] {
        &self.features
    }

    /// `(source view, flow_ij)` of every pair from the last processed frame.
    pub fn last_flows(&self) -> &[(usize, FlowField)] {
        &self.last_flows
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Overlap of each non-reference view with the reference, in canvas
    /// coordinates.
    pub fn overlaps(&self) -> Vec<(usize, Region)> {
        self.pairs.iter().map(|p| (p.source, p.overlap.region)).collect()
    }

    /// View `source` and the reference view of every frame set, warped with
    /// the current homographies onto the canvas, with their overlap.
    pub fn color_sequence(&self, frame_sets: &[Vec<Frame>], source: usize, scene: &str) -> Result<ColorSequence> {
        let reference = self.config.reference;
        let pair = self
            .pairs
            .iter()
            .find(|p| p.source == source)
            .ok_or_else(|| StitchError::config("source", format!("view {source} is not a non-reference view")))?;
        let mut seq = ColorSequence {
            scene: scene.to_string(),
            source: Vec::with_capacity(frame_sets.len()),
            reference: Vec::with_capacity(frame_sets.len()),
            overlap: pair.overlap.region,
        };
        for set in frame_sets {
            check_frames(&self.config, set)?;
            let (s, r) = self.pool.install(|| {
                rayon::join(
                    || warp_frame(&set[source], &self.to_reference[source], &self.canvas),
                    || warp_frame(&set[reference], &self.to_reference[reference], &self.canvas),
                )
            });
            seq.source.push(s?);
            seq.reference.push(r?);
        }
        Ok(seq)
    }

    /// Stitch one synchronized frame set and advance the temporal state.
    pub fn process_frame(&mut self, frames: &[Frame]) -> Result<(Frame, FrameReport)> {
        let size = check_frames(&self.config, frames)?;
        if size != self.frame_size {
            return Err(StitchError::InputMismatch(format!(
                "frame size {}x{} changed from {}x{}",
                size.0, size.1, self.frame_size.0, self.frame_size.1
            )));
        }
        let pool = self.pool.clone();
        pool.install(|| self.process_inner(frames))
    }

    fn process_inner(&mut self, frames: &[Frame]) -> Result<(Frame, FrameReport)> {
        let start = Instant::now();
        let mut degradations = Vec::new();
        let every = self.config.refine.every;
        if self.config.refine.enabled && every > 0 && self.frame_index > 0 && self.frame_index.is_multiple_of(every) {
            self.calibrate(frames, false)?;
        }
        let cfg = self.config.clone();
        let reference = cfg.reference;

        let t = Instant::now();
        let mut warped = self.warp_all(frames)?;
        let geometric_warping = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut pair_reports = Vec::with_capacity(self.pairs.len());
        for pair in &mut self.pairs {
            let region = pair.overlap.region;
            let src = &warped[pair.source];
            let fit = match transfer_fit(
                src,
                &warped[reference],
                &region,
                &region,
                &mut pair.window,
                cfg.transfer_mode,
            ) {
                Ok(f) => {
                    if f.degraded {
                        degradations.push(format!(
                            "view {}: rank-deficient color fit ({:.2e}), identity matrix",
                            pair.source, f.matrix.conditioning
                        ));
                    }
                    f
                }
                Err(e) => {
                    degradations.push(format!("view {}: color transfer skipped: {e}", pair.source));
                    TransferFit::identity(cfg.transfer_mode)
                }
            };
            let target = if cfg.correct_full_view {
                Region::full(src.width(), src.height())
            } else {
                region
            };
            warped[pair.source] = fit.apply(src, &target)?;
            let (matrix, degraded) = (fit.matrix, fit.degraded);
            pair_reports.push(PairReport {
                source: pair.source,
                matrix: matrix.row_major(),
                matrix_degraded: degraded,
                window_len: pair.window.len(),
                max_flow: 0.0,
            });
        }
        let color_correction = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut flows: Vec<(Frame, Frame, FlowField, FlowField)> = Vec::with_capacity(self.pairs.len());
        for (k, pair) in self.pairs.iter().enumerate() {
            let region = pair.overlap.region;
            let ri = warped[pair.source].crop(&region)?;
            let rj = warped[reference].crop(&region)?;
            let (fij, fji) = if cfg.disable_flow {
                (
                    FlowField::zeros(region.width(), region.height()),
                    FlowField::zeros(region.width(), region.height()),
                )
            } else {
                let (a, b) = rayon::join(|| dense_flow(&rj, &ri, &cfg.flow), || dense_flow(&ri, &rj, &cfg.flow));
                match (a, b) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => {
                        degradations.push(format!("view {}: zero flow: {e}", pair.source));
                        (
                            FlowField::zeros(region.width(), region.height()),
                            FlowField::zeros(region.width(), region.height()),
                        )
                    }
                }
            };
            pair_reports[k].max_flow = fij.max_abs().max(fji.max_abs());
            flows.push((ri, rj, fij, fji));
        }
        let local_warping = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut fused = Vec::with_capacity(self.pairs.len());
        for (pair, (ri, rj, fij, fji)) in self.pairs.iter().zip(&flows) {
            let frame = flow_fuse(ri, rj, fij, fji, &pair.weights, cfg.fuse_mode)?;
            fused.push(FusedOverlap {
                region: pair.overlap.region,
                frame,
            });
        }
        let mut order: Vec<&Frame> = vec![&warped[reference]];
        order.extend(
            warped
                .iter()
                .enumerate()
                .filter(|(v, _)| *v != reference)
                .map(|(_, f)| f),
        );
        let panorama = compose_panorama(&order, &fused)?;
        let image_blending = t.elapsed().as_secs_f64();
        self.last_flows = self
            .pairs
            .iter()
            .zip(flows)
            .map(|(p, (_, _, fij, _))| (p.source, fij))
            .collect();

        let t = Instant::now();
        let hist = frame_histogram(&panorama)?;
        let mut raw = find_thresholds(&hist, cfg.balance.lambda)?;
        raw.frame_index = self.frame_index;
        self.thresholds.push(raw);
        let smoothed = self.thresholds.smoothed()?;
        let out = apply_balance(&panorama, &build_curve(&smoothed, &cfg.balance));
        let color_balancing = t.elapsed().as_secs_f64();

        let report = FrameReport {
            frame: self.frame_index,
            stages: StageTimes {
                geometric_warping,
                color_correction,
                local_warping,
                image_blending,
                color_balancing,
            },
            all_time: start.elapsed().as_secs_f64(),
            pairs: pair_reports,
            thresholds: raw,
            smoothed,
            degradations,
        };
        self.frame_index += 1;
        Ok((out, report))
    }
}

/// Digest of the configuration (thread count excluded) and every input
/// frame, in processing order.
#[derive(Clone)]
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn new(config: &StitchConfig) -> Self {
        let mut c = config.clone();
        c.threads = 0;
        let mut h = Sha256::new();
        h.update(c.digest().as_bytes());
        InputDigest(h)
    }

    pub fn update(&mut self, frames: &[Frame]) {
        for f in frames {
            self.0.update((f.width() as u64).to_le_bytes());
            self.0.update((f.height() as u64).to_le_bytes());
            self.0.update(f.data());
        }
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Process a stream of synchronized frame sets, handing each panorama to
/// `sink` as soon as it is ready.
pub fn run_sequence_with<I, F>(config: &StitchConfig, frame_sets: I, mut sink: F) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<Vec<Frame>>>,
    F: FnMut(u64, &Frame) -> Result<()>,
{
    run_sequence_observed(config, frame_sets, |_, report, pano| sink(report.frame, pano))
}

/// Like [`run_sequence_with`], but the sink also sees the pipeline state
/// after each frame (calibration, features, last flow fields).
pub fn run_sequence_observed<I, F>(config: &StitchConfig, frame_sets: I, mut sink: F) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<Vec<Frame>>>,
    F: FnMut(&PipelineState, &FrameReport, &Frame) -> Result<()>,
{
    let mut digest = InputDigest::new(config);
    let mut state: Option<PipelineState> = None;
    let mut reports = Vec::new();
    let mut initialize_seconds = 0.0;
    for set in frame_sets {
        let set = set?;
        digest.update(&set);
        let st = match &mut state {
            Some(s) => s,
            None => {
                let t = Instant::now();
                let s = PipelineState::initialize(config, &set)?;
                initialize_seconds = t.elapsed().as_secs_f64();
                state.insert(s)
            }
        };
        let (pano, report) = st.process_frame(&set)?;
        sink(st, &report, &pano)?;
        reports.push(report);
    }
    let st = state.ok_or_else(|| StitchError::InputMismatch("empty input streams".into()))?;
    Ok(RunReport {
        config_digest: config.digest(),
        input_digest: digest.finish(),
        threads: st.threads(),
        canvas: st.canvas(),
        calibration: st.calibration().to_vec(),
        initialize_seconds,
        frames: reports,
    })
}

/// In-memory variant over per-view streams `streams[view][t]`.
pub fn run_sequence(config: &StitchConfig, streams: &[Vec<Frame>]) -> Result<(Vec<Frame>, RunReport)> {
    if streams.len() != config.views.len() {
        return Err(StitchError::InputMismatch(format!(
            "{} streams for {} views",
            streams.len(),
            config.views.len()
        )));
    }
    let n = streams[0].len();
    if streams.iter().any(|s| s.len() != n) {
        let lens: Vec<usize> = streams.iter().map(Vec::len).collect();
        return Err(StitchError::InputMismatch(format!("stream lengths differ: {lens:?}")));
    }
    let sets = (0..n).map(|t| Ok(streams.iter().map(|s| s[t].clone()).collect::<Vec<_>>()));
    let mut out = Vec::with_capacity(n);
    let report = run_sequence_with(config, sets, |_, p| {
        out.push(p.clone());
        Ok(())
    })?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color_balance::BalanceConfig;
    use crate::config::CameraConfig;
    use crate::geometry::{CameraExtrinsics, CameraIntrinsics};
    use crate::synth::{synth_scene, SynthSpec};

    fn camera() -> CameraConfig {
        CameraConfig {
            intrinsics: CameraIntrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 40.0,
                cy: 30.0,
            },
            extrinsics: CameraExtrinsics::identity(),
        }
    }

    fn textured(w: usize, h: usize) -> Frame {
        crate::flow::tests::rich_texture(w, h, 0.0, 0.0)
    }

    #[test]
    fn identical_views_reproduce_the_input() {
        let mut cfg = StitchConfig::with_cameras(vec![camera(), camera()], 1);
        cfg.balance = BalanceConfig::identity();
        cfg.threads = 2;
        let f = textured(96, 72);
        let mut st = PipelineState::initialize(&cfg, &[f.clone(), f.clone()]).unwrap();
        assert_eq!((st.canvas().width, st.canvas().height), (96, 72));
        assert!(st.homographies()[0].max_diff(&Homography::identity()) < 1e-6);
        assert_eq!(st.overlaps()[0].1, Region::full(96, 72));
        let (p, rep) = st.process_frame(&[f.clone(), f.clone()]).unwrap();
        for (a, b) in p.data().iter().zip(f.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
        assert_eq!(rep.frame, 0);
        assert_eq!(st.frame_index(), 1);
    }

    #[test]
    fn disjoint_views_are_a_configuration_error() {
        let mut far = camera();
        far.extrinsics.t = [50.0, 0.0, 1.0];
        let cfg = StitchConfig::with_cameras(vec![far, camera()], 1);
        let f = textured(80, 60);
        let e = PipelineState::initialize(&cfg, &[f.clone(), f]).unwrap_err();
        assert!(matches!(e, StitchError::NoOverlap) && e.is_config_error());
    }

    #[test]
    fn static_scene_reaches_steady_state() {
        let s = synth_scene(&SynthSpec {
            seed: 3,
            width: 128,
            height: 96,
            frames: 6,
            casts: vec![[0.85, 1.0, 1.1], [1.0; 3]],
            ..SynthSpec::default()
        })
        .unwrap();
        let (out, rep) = run_sequence(&s.config, &s.frames).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(rep.frames.len(), 6);
        for t in 3..6 {
            assert_eq!(out[t], out[2], "frame {t}");
        }
        assert!(rep.frames.iter().all(|f| f.pairs[0].window_len <= 3));
        assert_eq!(rep.frames[5].pairs[0].window_len, 3);
    }

    #[test]
    fn mismatched_streams_are_rejected() {
        let s = synth_scene(&SynthSpec {
            width: 64,
            height: 48,
            frames: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut streams = s.frames.clone();
        streams[0].pop();
        assert!(run_sequence(&s.config, &streams).unwrap_err().is_config_error());
        assert!(run_sequence(&s.config, &s.frames[..1]).unwrap_err().is_config_error());
    }

    #[test]
    fn report_rows_and_summary() {
        let s = synth_scene(&SynthSpec {
            width: 96,
            height: 72,
            frames: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let (_, rep) = run_sequence(&s.config, &s.frames).unwrap();
        let rows = rep.frame_rows();
        assert_eq!(rows.len(), 2);
        let text = crate::eval::to_csv_string(&rows).unwrap();
        assert!(text.starts_with(
            "Frame,Geometric Warping,Color Correction,Local Warping,Image Blending,Color Balancing,All time"
        ));
        let sum = rep.summary("x");
        assert_eq!(sum.frames, 2);
        assert!(sum.all_time >= sum.stages.max());
        let json = serde_json::to_string(&rep).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn debug_state_tracks_features_and_flows() {
        let s = synth_scene(&SynthSpec {
            seed: 5,
            frames: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut st = PipelineState::initialize(&s.config, &s.frame_set(0)).unwrap();
        assert_eq!(st.features().len(), 1);
        let d = &st.features()[0];
        assert_eq!(d.source, 0);
        assert_eq!(
            (d.source_keypoints.len(), d.reference_keypoints.len()),
            st.calibration()[0].keypoints
        );
        assert_eq!(d.matches.len(), st.calibration()[0].matches);
        assert!(st.last_flows().is_empty());
        st.process_frame(&s.frame_set(0)).unwrap();
        let (v, f) = &st.last_flows()[0];
        let r = st.overlaps()[0].1;
        assert_eq!((*v, f.width, f.height), (0, r.width(), r.height()));
    }

    #[test]
    fn color_sequence_uses_the_pair_overlap() {
        let s = synth_scene(&SynthSpec {
            width: 128,
            height: 96,
            frames: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        let st = PipelineState::initialize(&s.config, &s.frame_set(0)).unwrap();
        let sets: Vec<Vec<Frame>> = (0..3).map(|t| s.frame_set(t)).collect();
        let seq = st.color_sequence(&sets, 0, "x").unwrap();
        assert_eq!(seq.overlap, st.overlaps()[0].1);
        assert_eq!((seq.source.len(), seq.reference.len()), (3, 3));
        assert_eq!(seq.source[0].width(), st.canvas().width);
        assert!(st.color_sequence(&sets, 1, "x").unwrap_err().is_config_error());
    }
}
