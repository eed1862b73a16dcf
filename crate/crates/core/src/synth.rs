//! Synthetic multi-view scenes with known geometry.
//!
//! Cameras share the plane distance `D = focal` and look at a textured world
//! plane `Z = 0`, panned about the vertical axis; with `D = focal` one world
//! unit is roughly one reference pixel. An optional billboard in front of the
//! plane adds parallax when the camera centres are separated by `baseline`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CameraConfig, StitchConfig};
use crate::error::{Result, StitchError};
use crate::eval::ColorSequence;
use crate::flow::FlowField;
use crate::frame::{to_level, Frame, Region};
use crate::geometry::{
    compute_canvas, overlap_regions, pairwise_homography, planar_homography, rotation_from_ypr, warp_frame,
    CameraExtrinsics, CameraIntrinsics, Canvas, Homography,
};
use crate::io::{write_bytes, write_png, SequenceWriter};

/// A one-frame gain on one view, optionally limited to a vertical band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flicker {
    pub view: usize,
    pub frame: usize,
    pub gain: [f64; 3],
    /// Horizontal extent as fractions of the image width.
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Horizontal overlap of adjacent views as a fraction of the width.
    pub overlap: f64,
    /// Focal length as a multiple of the width.
    pub focal: f64,
    /// Per-view RGB gains; empty means none.
    pub casts: Vec<[f64; 3]>,
    pub flicker: Vec<Flicker>,
    /// Billboard height above the plane as a fraction of `D`; 0 disables it.
    pub parallax_depth: f64,
    /// Camera centre spacing as a fraction of `D`.
    pub baseline: f64,
    /// Gaussian noise standard deviation in levels.
    pub noise: f64,
    /// Relative error injected into the configured intrinsics.
    pub perturb: f64,
    /// Texture drift in world units per frame.
    pub motion: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            views: 2,
            width: 320,
            height: 240,
            frames: 5,
            overlap: 0.4,
            focal: 1.0,
            casts: Vec::new(),
            flicker: Vec::new(),
            parallax_depth: 0.0,
            baseline: 0.0,
            noise: 0.0,
            perturb: 0.0,
            motion: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |p: &str, m: &str| Err(StitchError::config(format!("synth.{p}"), m));
        if !(2..=3).contains(&self.views) {
            return err("views", "must be 2 or 3");
        }
        if self.width < 32 || self.height < 32 {
            return err("width", "frames must be at least 32x32");
        }
        if self.frames == 0 {
            return err("frames", "must be positive");
        }
        if !(self.overlap > 0.05 && self.overlap < 0.9) {
            return err("overlap", "must lie in (0.05, 0.9)");
        }
        if !(self.focal.is_finite() && self.focal > 0.1) {
            return err("focal", "must exceed 0.1");
        }
        if !self.casts.is_empty() && self.casts.len() != self.views {
            return err("casts", "one gain triple per view");
        }
        if self.casts.iter().flatten().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return err("casts", "gains must be non-negative");
        }
        for f in &self.flicker {
            if f.view >= self.views || f.frame >= self.frames {
                return err("flicker", "view or frame out of range");
            }
            if let Some((a, b)) = f.band {
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
                    return err("flicker", "band must be an increasing pair in [0, 1]");
                }
            }
        }
        if !(0.0..0.9).contains(&self.parallax_depth) {
            return err("parallax_depth", "must lie in [0, 0.9)");
        }
        if !(self.baseline.is_finite() && self.baseline.abs() < 0.5) {
            return err("baseline", "must lie in (-0.5, 0.5)");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return err("noise", "must be non-negative");
        }
        if !(self.perturb.is_finite() && self.perturb.abs() < 0.5) {
            return err("perturb", "must lie in (-0.5, 0.5)");
        }
        Ok(())
    }

    pub fn reference(&self) -> usize {
        self.views / 2
    }

    pub fn focal_px(&self) -> f64 {
        self.focal * self.width as f64
    }

    /// Pan between adjacent views giving the requested overlap.
    pub fn pan_degrees(&self) -> f64 {
        let hfov = 2.0 * (self.width as f64 / (2.0 * self.focal_px())).atan();
        ((1.0 - self.overlap) * hfov).to_degrees()
    }
}

/// Known geometry of a synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cameras: Vec<CameraConfig>,
    pub to_reference: Vec<Homography>,
    pub canvas: Canvas,
    /// Clean render from the reference viewpoint over the canvas, per frame.
    #[serde(skip)]
    pub panorama: Vec<Frame>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    /// `frames[view][t]`.
    pub frames: Vec<Vec<Frame>>,
    /// Configuration with the perturbed cameras.
    pub config: StitchConfig,
    pub truth: GroundTruth,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn hash(seed: u64, a: i64, b: i64, k: u64) -> u64 {
    mix(seed ^ mix((a as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ mix((b as u64) ^ mix(k))))
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64, scale: f64, k: u64) -> f64 {
    let (gx, gy) = (x / scale, y / scale);
    let (ix, iy) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - ix, gy - iy);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (ix as i64, iy as i64);
    let c = |dx: i64, dy: i64| unit(hash(seed, ix + dx, iy + dy, k));
    let top = c(0, 0) + sx * (c(1, 0) - c(0, 0));
    let bot = c(0, 1) + sx * (c(1, 1) - c(0, 1));
    top + sy * (bot - top)
}

/// Disc of random colour in a hashed grid cell, if `(x, y)` falls inside it.
fn disc(seed: u64, x: f64, y: f64, cell: f64, k: u64) -> Option<[f64; 3]> {
    let (cx, cy) = ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let h = hash(seed, cx, cy, k);
    if unit(mix(h)) > 0.7 {
        return None;
    }
    let r = 3.0 + 7.0 * unit(mix(h ^ 1));
    let m = r + 1.0;
    let px = cx as f64 * cell + m + (cell - 2.0 * m) * unit(mix(h ^ 2));
    let py = cy as f64 * cell + m + (cell - 2.0 * m) * unit(mix(h ^ 3));
    if (x - px).powi(2) + (y - py).powi(2) > r * r {
        return None;
    }
    let bright = unit(mix(h ^ 4)) < 0.5;
    Some(std::array::from_fn(|c| {
        let v = unit(mix(h ^ (5 + c as u64)));
        if bright {
            200.0 + 55.0 * v
        } else {
            40.0 * v
        }
    }))
}

fn plane_texture(seed: u64, x: f64, y: f64) -> [f64; 3] {
    if let Some(c) = disc(seed, x, y, 36.0, 11) {
        return c;
    }
    std::array::from_fn(|c| {
        let k = c as u64 * 7;
        let v = 0.5 * value_noise(seed, x, y, 64.0, k)
            + 0.3 * value_noise(seed, x, y, 23.0, k + 1)
            + 0.2 * value_noise(seed, x, y, 9.0, k + 2);
        30.0 + 195.0 * v
    })
}

fn billboard_texture(seed: u64, x: f64, y: f64) -> [f64; 3] {
    if let Some(c) = disc(seed, x, y, 28.0, 23) {
        return c;
    }
    let (cx, cy) = ((x / 20.0).floor() as i64, (y / 20.0).floor() as i64);
    let h = hash(seed, cx, cy, 31);
    std::array::from_fn(|c| 60.0 + 140.0 * unit(mix(h ^ c as u64)))
}

/// World-space scene description shared by every view.
struct World {
    seed: u64,
    /// `(x0, x1, y0, y1, z)` of the billboard rectangle.
    billboard: Option<(f64, f64, f64, f64, f64)>,
}

/// A camera as seen by the ray caster.
struct RayCamera {
    centre: [f64; 3],
    /// Camera-to-world rotation.
    r_c2w: [[f64; 3]; 3],
    k: CameraIntrinsics,
}

impl RayCamera {
    fn new(cam: &CameraConfig) -> Self {
        let r = cam.extrinsics.r;
        let t = cam.extrinsics.t;
        let r_c2w: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|k| r[k][i]));
        // C = -R^T t
        let centre = std::array::from_fn(|i| -(0..3).map(|k| r_c2w[i][k] * t[k]).sum::<f64>());
        RayCamera {
            centre,
            r_c2w,
            k: cam.intrinsics,
        }
    }

    fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let d = [(u - self.k.cx) / self.k.fx, (v - self.k.cy) / self.k.fy, 1.0];
        std::array::from_fn(|i| (0..3).map(|k| self.r_c2w[i][k] * d[k]).sum())
    }

    fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let rel: [f64; 3] = std::array::from_fn(|i| p[i] - self.centre[i]);
        let c: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| self.r_c2w[k][i] * rel[k]).sum());
        (c[2] > 1e-9).then(|| (self.k.fx * c[0] / c[2] + self.k.cx, self.k.fy * c[1] / c[2] + self.k.cy))
    }
}

impl World {
    /// First surface hit along `centre + s d`.
    fn hit(&self, centre: [f64; 3], d: [f64; 3]) -> Option<([f64; 3], bool)> {
        if let Some((x0, x1, y0, y1, z)) = self.billboard {
            if d[2] > 1e-12 {
                let s = (z - centre[2]) / d[2];
                let p = [centre[0] + s * d[0], centre[1] + s * d[1], z];
                if s > 0.0 && p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1 {
                    return Some((p, true));
                }
            }
        }
        if d[2] <= 1e-12 {
            return None;
        }
        let s = -centre[2] / d[2];
        Some(([centre[0] + s * d[0], centre[1] + s * d[1], 0.0], false))
    }

    fn shade(&self, centre: [f64; 3], d: [f64; 3], shift: f64) -> [f64; 3] {
        match self.hit(centre, d) {
            Some((p, true)) => billboard_texture(self.seed, p[0], p[1]),
            Some((p, false)) => plane_texture(self.seed, p[0] - shift, p[1]),
            None => [0.0; 3],
        }
    }
}

const SUBSAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

fn render(
    world: &World,
    cam: &RayCamera,
    w: usize,
    h: usize,
    xform: impl Fn(f64, f64) -> (f64, f64) + Sync,
    shift: f64,
) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let mut acc = [0.0; 3];
            for (dx, dy) in SUBSAMPLES {
                let (u, v) = xform(x as f64 + dx, y as f64 + dy);
                let c = world.shade(cam.centre, cam.ray(u, v), shift);
                for k in 0..3 {
                    acc[k] += c[k] / SUBSAMPLES.len() as f64;
                }
            }
            *px = acc;
        }
    });
    out
}

/// True cameras: view `v` is panned by `(v - ref) * pan` degrees.
pub fn scene_cameras(spec: &SynthSpec) -> Vec<CameraConfig> {
    let f = spec.focal_px();
    let d = f;
    let k = CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (spec.width as f64 - 1.0) / 2.0,
        cy: (spec.height as f64 - 1.0) / 2.0,
    };
    let pan = spec.pan_degrees();
    let rf = spec.reference() as f64;
    (0..spec.views)
        .map(|v| {
            let phi = (v as f64 - rf) * pan;
            // world-to-camera is the inverse pan
            let r = rotation_from_ypr(0.0, -phi, 0.0);
            let c = [spec.baseline * d * (v as f64 - rf), 0.0, -d];
            let t = std::array::from_fn(|i| -(0..3).map(|k| r[i][k] * c[k]).sum::<f64>());
            CameraConfig {
                intrinsics: k,
                extrinsics: CameraExtrinsics::new(r, t),
            }
        })
        .collect()
}

/// Configured cameras: every intrinsic parameter scaled by `1 +- perturb`
/// with seeded signs.
pub fn perturbed_cameras(spec: &SynthSpec, truth: &[CameraConfig]) -> Vec<CameraConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_ca11);
    truth
        .iter()
        .map(|c| {
            let mut s = || {
                1.0 + if rng.random::<bool>() {
                    spec.perturb
                } else {
                    -spec.perturb
                }
            };
            let k = c.intrinsics;
            CameraConfig {
                intrinsics: CameraIntrinsics {
                    fx: k.fx * s(),
                    fy: k.fy * s(),
                    cx: k.cx * s(),
                    cy: k.cy * s(),
                },
                extrinsics: c.extrinsics,
            }
        })
        .collect()
}

fn to_reference(cameras: &[CameraConfig], reference: usize) -> Result<Vec<Homography>> {
    let planar: Vec<Homography> = cameras
        .iter()
        .map(|c| planar_homography(&c.intrinsics, &c.extrinsics))
        .collect::<Result<_>>()?;
    planar
        .iter()
        .map(|h| pairwise_homography(&planar[reference], h))
        .collect()
}

fn world_for(spec: &SynthSpec, truth: &[CameraConfig]) -> World {
    let d = spec.focal_px();
    let billboard = (spec.parallax_depth > 0.0).then(|| {
        // centred on the overlap between view 0 and its neighbour
        let a = RayCamera::new(&truth[0]);
        let b = RayCamera::new(&truth[1]);
        let mid = |c: &RayCamera| {
            let r = c.ray(c.k.cx, c.k.cy);
            let s = -c.centre[2] / r[2];
            c.centre[0] + s * r[0]
        };
        let xc = 0.5 * (mid(&a) + mid(&b));
        let z = -spec.parallax_depth * d;
        let half_w = 0.12 * spec.width as f64;
        let half_h = 0.25 * spec.height as f64;
        (xc - half_w, xc + half_w, -half_h, half_h, z)
    });
    World {
        seed: spec.seed,
        billboard,
    }
}

fn quantize(px: &[[f64; 3]]) -> Vec<u8> {
    px.iter().flat_map(|p| p.map(to_level)).collect()
}

/// Render every view and frame plus the ground truth.
pub fn synth_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let reference = spec.reference();
    let cams = scene_cameras(spec);
    let world = world_for(spec, &cams);
    let rays: Vec<RayCamera> = cams.iter().map(RayCamera::new).collect();
    let truth_h = to_reference(&cams, reference)?;
    let canvas = compute_canvas(&truth_h, &vec![(w, h); spec.views])?;

    let mut frames = vec![Vec::with_capacity(spec.frames); spec.views];
    for t in 0..spec.frames {
        let shift = spec.motion * t as f64;
        for (v, cam) in rays.iter().enumerate() {
            let mut px = render(&world, cam, w, h, |x, y| (x, y), shift);
            let cast = spec.casts.get(v).copied().unwrap_or([1.0; 3]);
            let flicker: Vec<&Flicker> = spec.flicker.iter().filter(|f| f.view == v && f.frame == t).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(hash(spec.seed, v as i64, t as i64, 99));
            let normal = Normal::new(0.0, spec.noise.max(1e-12))
                .map_err(|e| StitchError::config("synth.noise", e.to_string()))?;
            for (i, p) in px.iter_mut().enumerate() {
                let xf = (i % w) as f64 / w as f64;
                let mut gain = cast;
                for f in &flicker {
                    if f.band.is_none_or(|(a, b)| xf >= a && xf < b) {
                        for c in 0..3 {
                            gain[c] *= f.gain[c];
                        }
                    }
                }
                for c in 0..3 {
                    p[c] *= gain[c];
                    if spec.noise > 0.0 {
                        p[c] += normal.sample(&mut rng);
                    }
                }
            }
            frames[v].push(Frame::from_raw(w, h, quantize(&px))?);
        }
    }

    let inv: Vec<Homography> = truth_h.iter().map(|h| h.inverse()).collect::<Result<_>>()?;
    let (ox, oy) = (canvas.offset_x as f64, canvas.offset_y as f64);
    let covered: Vec<bool> = (0..canvas.width * canvas.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % canvas.width) as f64 - ox, (i / canvas.width) as f64 - oy);
            inv.iter().any(|hi| {
                hi.apply(x, y)
                    .is_some_and(|(u, v)| u >= -0.5 && v >= -0.5 && u <= w as f64 - 0.5 && v <= h as f64 - 0.5)
            })
        })
        .collect();
    let panorama = (0..spec.frames)
        .map(|t| {
            let px = render(
                &world,
                &rays[reference],
                canvas.width,
                canvas.height,
                |x, y| (x - ox, y - oy),
                spec.motion * t as f64,
            );
            Frame::from_raw(canvas.width, canvas.height, quantize(&px))?.with_mask(covered.clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut config = StitchConfig::with_cameras(perturbed_cameras(spec, &cams), reference);
    config.seed = spec.seed;
    Ok(SynthScene {
        spec: spec.clone(),
        frames,
        config,
        truth: GroundTruth {
            cameras: cams,
            to_reference: truth_h,
            canvas,
            panorama,
        },
    })
}

impl SynthScene {
    /// Frames of every view at time `t`.
    pub fn frame_set(&self, t: usize) -> Vec<Frame> {
        self.frames.iter().map(|v| v[t].clone()).collect()
    }

    /// View `source` and the reference view warped with the true geometry,
    /// with their shared overlap, for color-transfer evaluation.
    pub fn color_sequence(&self, source: usize) -> Result<ColorSequence> {
        let reference = self.spec.reference();
        if source >= self.spec.views || source == reference {
            return Err(StitchError::config(
                "source",
                format!("must be a non-reference view below {}", self.spec.views),
            ));
        }
        let c = &self.truth.canvas;
        let warp = |v: usize| -> Result<Vec<Frame>> {
            self.frames[v]
                .iter()
                .map(|f| warp_frame(f, &self.truth.to_reference[v], c))
                .collect()
        };
        let (src, rf) = (warp(source)?, warp(reference)?);
        let o = overlap_regions(&src[0].mask_or_full(), &rf[0].mask_or_full(), c.width, c.height)?;
        Ok(ColorSequence {
            scene: format!("synth-{}", self.spec.seed),
            source: src,
            reference: rf,
            overlap: o.region,
        })
    }

    /// `n` seeded points of `view` paired with their true reference-image
    /// positions on the world plane; only points inside the reference frame
    /// are kept.
    pub fn plane_correspondences(&self, view: usize, n: usize, seed: u64) -> Vec<((f64, f64), (f64, f64))> {
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let hv = &self.truth.to_reference[view];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n * 1000 {
            if out.len() == n {
                break;
            }
            let p = (rng.random_range(0.0..w - 1.0), rng.random_range(0.0..h - 1.0));
            if let Some(q) = hv.apply(p.0, p.1) {
                if q.0 >= 0.0 && q.1 >= 0.0 && q.0 <= w - 1.0 && q.1 <= h - 1.0 {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Canvas-space flow over `region` such that warped view `i` sampled at
    /// `x + flow(x)` shows what warped view `j` shows at `x`. Zero wherever
    /// `j` sees the plane.
    pub fn ground_truth_flow(&self, i: usize, j: usize, region: &Region) -> Result<FlowField> {
        let cams: Vec<RayCamera> = self.truth.cameras.iter().map(RayCamera::new).collect();
        let world = world_for(&self.spec, &self.truth.cameras);
        let inv_j = self.truth.to_reference[j].inverse()?;
        let hi = &self.truth.to_reference[i];
        let (ox, oy) = (self.truth.canvas.offset_x as f64, self.truth.canvas.offset_y as f64);
        let mut flow = FlowField::zeros(region.width(), region.height());
        for y in 0..region.height() {
            for x in 0..region.width() {
                let (cx, cy) = ((region.x0 + x) as f64, (region.y0 + y) as f64);
                let Some((u, v)) = inv_j.apply(cx - ox, cy - oy) else {
                    continue;
                };
                let Some((p, _)) = world.hit(cams[j].centre, cams[j].ray(u, v)) else {
                    continue;
                };
                let Some((ui, vi)) = cams[i].project(p) else { continue };
                let Some((rx, ry)) = hi.apply(ui, vi) else { continue };
                let k = y * region.width() + x;
                flow.u[k] = (rx + ox - cx) as f32;
                flow.v[k] = (ry + oy - cy) as f32;
            }
        }
        Ok(flow)
    }

    /// Frames under `dir/view{v}/`, the config (with relative view
    /// directories), the ground truth and the clean panoramas.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut config = self.config.clone();
        for (v, frames) in self.frames.iter().enumerate() {
            let name = format!("view{v}");
            let mut writer = SequenceWriter::create(&dir.join(&name), "frame_", "png")?;
            for f in frames {
                writer.write(f)?;
            }
            config.views[v].dir = Some(PathBuf::from(name));
        }
        let cfg_path = dir.join("config.json");
        write_bytes(&cfg_path, serde_json::to_string_pretty(&config.to_json())?.as_bytes())?;
        let truth = serde_json::json!({
            "spec": self.spec,
            "cameras": self.truth.cameras,
            "to_reference": self.truth.to_reference.iter().map(|h| h.eight()).collect::<Vec<_>>(),
            "canvas": self.truth.canvas,
        });
        write_bytes(
            &dir.join("truth.json"),
            serde_json::to_string_pretty(&truth)?.as_bytes(),
        )?;
        let truth_dir = dir.join("truth");
        std::fs::create_dir_all(&truth_dir)?;
        for (t, p) in self.truth.panorama.iter().enumerate() {
            write_png(&truth_dir.join(format!("pano_{t:06}.png")), p)?;
        }
        Ok(cfg_path)
    }
}
