//! Coarse-to-fine Horn-Schunck optical flow on Rec. 601 luma.
//!
//! `dense_flow(a, b)` returns `f` with `a(x) ~ b(x + f(x))`. Every level runs
//! Jacobi sweeps that read the previous iterate and write a fresh buffer, so
//! row-parallel execution gives the same bits as a sequential loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StitchError};
use crate::frame::{sample_plane, Frame};

/// Smallest side accepted by [`dense_flow`].
pub const MIN_FLOW_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub iterations: usize,
    /// Smoothness weight on `[0, 255]` intensities.
    pub smoothness: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 4,
            iterations: 50,
            smoothness: 15.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 12 {
            return Err(StitchError::config("flow.levels", "must be in 1..=12"));
        }
        if self.iterations == 0 {
            return Err(StitchError::config("flow.iterations", "must be positive"));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(StitchError::config("flow.smoothness", "must be positive"));
        }
        Ok(())
    }
}

/// Per-pixel displacement `(u, v)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn max_abs(&self) -> f32 {
        self.u.iter().chain(&self.v).fold(0.0f32, |m, x| m.max(x.abs()))
    }

    /// Little-endian `u32` width and height, then the `u` and `v` planes as
    /// `f32`.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.u.len());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for x in self.u.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Option<Self> {
        let word = |i: usize| -> Option<[u8; 4]> { bytes.get(i..i + 4)?.try_into().ok() };
        let w = u32::from_le_bytes(word(0)?) as usize;
        let h = u32::from_le_bytes(word(4)?) as usize;
        if bytes.len() != 8 + 8 * w * h {
            return None;
        }
        let plane = |k: usize| -> Vec<f32> {
            (0..w * h)
                .map(|i| f32::from_le_bytes(word(8 + 4 * (k * w * h + i)).unwrap()))
                .collect()
        };
        Some(FlowField {
            width: w,
            height: h,
            u: plane(0),
            v: plane(1),
        })
    }
}

struct Plane {
    w: usize,
    h: usize,
    px: Vec<f32>,
    valid: Vec<f32>,
}

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut tmp = vec![0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kw) in KERNEL.iter().enumerate() {
                let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += kw * src[y * w + sx];
            }
            *o = acc;
        }
    });
    let mut out = vec![0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kw) in KERNEL.iter().enumerate() {
                let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += kw * tmp[sy * w + x];
            }
            *o = acc;
        }
    });
    out
}

fn decimate(src: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            out.push(src[(2 * y) * w + 2 * x]);
        }
    }
    (out, w2, h2)
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.w.div_ceil(2) < 8 || last.h.div_ceil(2) < 8 {
            break;
        }
        let (px, w, h) = decimate(&blur(&last.px, last.w, last.h), last.w, last.h);
        let (valid, _, _) = decimate(&blur(&last.valid, last.w, last.h), last.w, last.h);
        let valid = valid.into_iter().map(|v| if v > 0.999 { 1.0 } else { 0.0 }).collect();
        out.push(Plane { w, h, px, valid });
    }
    out
}

fn to_plane(f: &Frame) -> Plane {
    Plane {
        w: f.width(),
        h: f.height(),
        px: f.luma_f32(),
        valid: f.mask_or_full().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    }
}

fn upsample(src: &[f32], w: usize, h: usize, w2: usize, h2: usize) -> Vec<f32> {
    let mut out = vec![0f32; w2 * h2];
    out.par_chunks_mut(w2).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = 2.0 * sample_plane(src, w, h, x as f32 / 2.0, y as f32 / 2.0);
        }
    });
    out
}

/// Horn-Schunck neighbourhood average (1/6 edge, 1/12 corner), edge-clamped.
#[inline]
fn neighbour_mean(f: &[f32], w: usize, h: usize, x: usize, y: usize) -> f32 {
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    (f[y * w + xm] + f[y * w + xp] + f[ym * w + x] + f[yp * w + x]) / 6.0
        + (f[ym * w + xm] + f[ym * w + xp] + f[yp * w + xm] + f[yp * w + xp]) / 12.0
}

fn refine_level(a: &Plane, b: &Plane, u: &mut Vec<f32>, v: &mut Vec<f32>, cfg: &FlowConfig) {
    let (w, h) = (a.w, a.h);
    // warp b towards a with the current estimate
    let mut bw = vec![0f32; w * h];
    let mut ok = vec![false; w * h];
    bw.par_chunks_mut(w)
        .zip(ok.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (brow, orow))| {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f32 + u[i], y as f32 + v[i]);
                brow[x] = sample_plane(&b.px, w, h, sx, sy);
                let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32;
                orow[x] = inside && a.valid[i] > 0.5 && sample_plane(&b.valid, w, h, sx, sy) > 0.999;
            }
        });
    let grad = |p: &[f32], x: usize, y: usize| -> (f32, f32) {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(w - 1);
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        (
            (p[y * w + xp] - p[y * w + xm]) / (xp - xm).max(1) as f32,
            (p[yp * w + x] - p[ym * w + x]) / (yp - ym).max(1) as f32,
        )
    };
    let mut terms = vec![(0f32, 0f32, 0f32); w * h];
    terms.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, t) in row.iter_mut().enumerate() {
            let i = y * w + x;
            if !ok[i] {
                continue;
            }
            let (ax, ay) = grad(&a.px, x, y);
            let (bx, by) = grad(&bw, x, y);
            *t = (0.5 * (ax + bx), 0.5 * (ay + by), bw[i] - a.px[i]);
        }
    });
    let alpha2 = (cfg.smoothness * cfg.smoothness) as f32;
    let (u0, v0) = (u.clone(), v.clone());
    let mut nu = vec![0f32; w * h];
    let mut nv = vec![0f32; w * h];
    for _ in 0..cfg.iterations {
        nu.par_chunks_mut(w)
            .zip(nv.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (urow, vrow))| {
                for x in 0..w {
                    let i = y * w + x;
                    let ub = neighbour_mean(u, w, h, x, y);
                    let vb = neighbour_mean(v, w, h, x, y);
                    let (ix, iy, it) = terms[i];
                    let t = (ix * (ub - u0[i]) + iy * (vb - v0[i]) + it) / (alpha2 + ix * ix + iy * iy);
                    urow[x] = ub - ix * t;
                    vrow[x] = vb - iy * t;
                }
            });
        std::mem::swap(u, &mut nu);
        std::mem::swap(v, &mut nv);
    }
}

/// Flow `f` with `a(x) ~ b(x + f(x))`; zero wherever either input is masked.
pub fn dense_flow(a: &Frame, b: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    if !a.same_shape(b) {
        return Err(StitchError::ShapeMismatch(format!(
            "flow inputs {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width() < MIN_FLOW_SIZE || a.height() < MIN_FLOW_SIZE {
        return Err(StitchError::TooSmall(MIN_FLOW_SIZE));
    }
    let pa = pyramid(to_plane(a), cfg.levels.max(1));
    let pb = pyramid(to_plane(b), pa.len());
    let top = pa.len() - 1;
    let mut u = vec![0f32; pa[top].w * pa[top].h];
    let mut v = u.clone();
    for level in (0..=top).rev() {
        if level < top {
            let (cw, ch) = (pa[level + 1].w, pa[level + 1].h);
            let (fw, fh) = (pa[level].w, pa[level].h);
            u = upsample(&u, cw, ch, fw, fh);
            v = upsample(&v, cw, ch, fw, fh);
        }
        refine_level(&pa[level], &pb[level], &mut u, &mut v, cfg);
    }
    let (w, h) = (a.width(), a.height());
    for y in 0..h {
        for x in 0..w {
            if !a.is_valid(x, y) || !b.is_valid(x, y) {
                u[y * w + x] = 0.0;
                v[y * w + x] = 0.0;
            }
        }
    }
    Ok(FlowField {
        width: w,
        height: h,
        u,
        v,
    })
}
