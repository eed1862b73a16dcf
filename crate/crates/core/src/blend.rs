//! Positional blend weights, flow-displaced fusion of overlaps and final
//! panorama composition.
//!
//! `theta_i = d_i / (d_i + d_j)` where `d_i` is the distance to the part of
//! the canvas covered by `j` alone, so `theta_i` is 1 on the edge of the
//! overlap that borders `i`'s exclusive zone and falls to 0 towards `j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StitchError};
use crate::flow::FlowField;
use crate::frame::{sample_bilinear, to_level, Frame, Region, Sample};
use crate::geometry::Overlap;

/// Exact squared Euclidean distance transform (Felzenszwalb-Huttenlocher).
/// `seeds` marks the zero-distance pixels; without seeds every entry is
/// infinite.
pub fn squared_distance_transform(seeds: &[bool], width: usize, height: usize) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { inf }).collect();
    if !seeds.iter().any(|&s| s) {
        return grid;
    }
    grid.par_chunks_mut(width).for_each(|row| {
        let out = edt_1d(row);
        row.copy_from_slice(&out);
    });
    let mut cols: Vec<Vec<f64>> = (0..width)
        .into_par_iter()
        .map(|x| {
            let col: Vec<f64> = (0..height).map(|y| grid[y * width + x]).collect();
            edt_1d(&col)
        })
        .collect();
    for (x, col) in cols.iter_mut().enumerate() {
        for (y, v) in col.iter().enumerate() {
            grid[y * width + x] = *v;
        }
    }
    grid
}

fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![f64::INFINITY; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(p) => p,
        None => return d,
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    // cannot happen: z[0] is -inf
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
    d
}

/// Per-pixel weights over an overlap region; `theta_i + theta_j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    pub width: usize,
    pub height: usize,
    pub theta_i: Vec<f64>,
    pub theta_j: Vec<f64>,
}

impl BlendWeights {
    pub fn uniform(width: usize, height: usize, theta_i: f64) -> Self {
        BlendWeights {
            width,
            height,
            theta_i: vec![theta_i; width * height],
            theta_j: vec![1.0 - theta_i; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.theta_i[i], self.theta_j[i])
    }
}

/// `theta_i = d_i / (d_i + d_j)`; equal split when both are infinite or zero.
#[inline]
pub fn weight_from_distances(d_i: f64, d_j: f64) -> (f64, f64) {
    let ti = match (d_i.is_finite(), d_j.is_finite()) {
        (false, false) => 0.5,
        (false, true) => 1.0,
        (true, false) => 0.0,
        (true, true) if d_i + d_j <= 0.0 => 0.5,
        (true, true) => d_i / (d_i + d_j),
    };
    (ti, 1.0 - ti)
}

/// Distance of every canvas pixel to the zone `other` covers without `own`;
/// falls back to the pixels `own` does not cover when that zone is empty.
fn distance_to_other_side(own: &[bool], other: &[bool], width: usize, height: usize) -> Vec<f64> {
    let exclusive: Vec<bool> = own.iter().zip(other).map(|(&a, &b)| b && !a).collect();
    let seeds = if exclusive.iter().any(|&s| s) {
        exclusive
    } else {
        own.iter().map(|&a| !a).collect()
    };
    squared_distance_transform(&seeds, width, height)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Weights over `overlap.region` from the two canvas masks.
pub fn blend_weights(
    mask_i: &[bool],
    mask_j: &[bool],
    width: usize,
    height: usize,
    overlap: &Overlap,
) -> Result<BlendWeights> {
    if mask_i.len() != width * height || mask_j.len() != width * height {
        return Err(StitchError::ShapeMismatch("masks must cover the canvas".into()));
    }
    let di = distance_to_other_side(mask_i, mask_j, width, height);
    let dj = distance_to_other_side(mask_j, mask_i, width, height);
    let r = overlap.region;
    let mut out = BlendWeights::uniform(r.width(), r.height(), 0.5);
    for y in 0..r.height() {
        for x in 0..r.width() {
            let c = (r.y0 + y) * width + r.x0 + x;
            let (ti, tj) = weight_from_distances(di[c], dj[c]);
            out.theta_i[y * r.width() + x] = ti;
            out.theta_j[y * r.width() + x] = tj;
        }
    }
    Ok(out)
}

/// Which weight displaces which flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// `i` is sampled at `x + theta_i flow_ij`, `j` at `x + theta_j flow_ji`.
    #[default]
    Literal,
    /// `i` is sampled at `x + theta_j flow_ij`, `j` at `x + theta_i flow_ji`;
    /// each view is undisplaced on its own side of the overlap.
    Cross,
}

/// Flow-displaced weighted fusion of two co-registered regions.
///
/// `flow_ij` must satisfy `j(x) ~ i(x + flow_ij(x))`, i.e. it is
/// `dense_flow(region_j, region_i)`. A sample that falls outside its view is
/// replaced by the other view's sample with full weight; pixels where both
/// fail are left invalid.
pub fn flow_fuse(
    region_i: &Frame,
    region_j: &Frame,
    flow_ij: &FlowField,
    flow_ji: &FlowField,
    weights: &BlendWeights,
    mode: FuseMode,
) -> Result<Frame> {
    let (w, h) = (region_i.width(), region_i.height());
    let dims_ok = region_j.width() == w
        && region_j.height() == h
        && flow_ij.width == w
        && flow_ij.height == h
        && flow_ji.width == w
        && flow_ji.height == h
        && weights.width == w
        && weights.height == h;
    if !dims_ok {
        return Err(StitchError::ShapeMismatch("fusion inputs differ in size".into()));
    }
    let mut data = vec![0u8; w * h * 3];
    let mut mask = vec![false; w * h];
    data.par_chunks_mut(w * 3)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mrow))| {
            for x in 0..w {
                let (ti, tj) = weights.at(x, y);
                let (ki, kj) = match mode {
                    FuseMode::Literal => (ti, tj),
                    FuseMode::Cross => (tj, ti),
                };
                let (uij, vij) = flow_ij.at(x, y);
                let (uji, vji) = flow_ji.at(x, y);
                let pi = sample_bilinear(region_i, x as f64 + ki * uij as f64, y as f64 + ki * vij as f64);
                let pj = sample_bilinear(region_j, x as f64 + kj * uji as f64, y as f64 + kj * vji as f64);
                let rgb = match (pi.valid, pj.valid) {
                    (true, true) => std::array::from_fn(|c| ti * pi.rgb[c] + tj * pj.rgb[c]),
                    (true, false) => pi.rgb,
                    (false, true) => pj.rgb,
                    (false, false) => continue,
                };
                for c in 0..3 {
                    row[x * 3 + c] = to_level(rgb[c]);
                }
                mrow[x] = true;
            }
        });
    Frame::from_raw(w, h, data)?.with_mask(mask)
}

/// A fused overlap ready to be pasted onto the canvas.
#[derive(Debug, Clone)]
pub struct FusedOverlap {
    pub region: Region,
    pub frame: Frame,
}

/// Per-pixel case dispatch over canvas-sized views.
///
/// A pixel inside a fused overlap whose fused sample is valid takes the
/// fused value. Otherwise it copies the first view (in the given order)
/// that covers it. Pixels no view covers stay black and masked out.
pub fn compose_panorama(views: &[&Frame], fused: &[FusedOverlap]) -> Result<Frame> {
    let first = views
        .first()
        .ok_or_else(|| StitchError::ShapeMismatch("no views to compose".into()))?;
    let (w, h) = (first.width(), first.height());
    if views.iter().any(|v| v.width() != w || v.height() != h) {
        return Err(StitchError::ShapeMismatch("views must share the canvas".into()));
    }
    for f in fused {
        if f.frame.width() != f.region.width() || f.frame.height() != f.region.height() || !f.region.fits(w, h) {
            return Err(StitchError::ShapeMismatch(format!("fused overlap {}", f.region)));
        }
    }
    let mut data = vec![0u8; w * h * 3];
    let mut mask = vec![false; w * h];
    data.par_chunks_mut(w * 3)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mrow))| {
            for x in 0..w {
                let from_fused = fused.iter().find_map(|f| {
                    if !f.region.contains(x, y) {
                        return None;
                    }
                    let (fx, fy) = (x - f.region.x0, y - f.region.y0);
                    let covered = views.iter().filter(|v| v.is_valid(x, y)).count() >= 2;
                    (covered && f.frame.is_valid(fx, fy)).then(|| f.frame.pixel(fx, fy))
                });
                let px = from_fused.or_else(|| views.iter().find(|v| v.is_valid(x, y)).map(|v| v.pixel(x, y)));
                if let Some(p) = px {
                    row[x * 3..x * 3 + 3].copy_from_slice(&p);
                    mrow[x] = true;
                }
            }
        });
    Frame::from_raw(w, h, data)?.with_mask(mask)
}

/// Sample helper for callers that need the raw interpolated value.
pub fn sample(frame: &Frame, x: f64, y: f64) -> Sample {
    sample_bilinear(frame, x, y)
}
