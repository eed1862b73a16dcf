use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Keypoint;
use crate::error::{Result, StitchError};
use crate::frame::{Frame, Region};
use crate::integral::IntegralImage;

/// Smallest region side the detector accepts.
pub const MIN_REGION: usize = 32;

/// Filter side lengths per octave and the sampling step of each octave.
const OCTAVES: [([usize; 4], usize); 3] = [([9, 15, 21, 27], 1), ([15, 27, 39, 51], 2), ([27, 51, 75, 99], 4)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum Hessian determinant on intensities scaled to `[0, 1]`.
    pub threshold: f64,
    pub octaves: usize,
    pub interpolate: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 4e-4,
            octaves: 3,
            interpolate: true,
        }
    }
}

struct Planes {
    gray: IntegralImage,
    invalid: IntegralImage,
}

impl Planes {
    #[inline]
    fn boxed(&self, row: i64, col: i64, rows: i64, cols: i64) -> f64 {
        self.gray.box_sum_clamped(col, row, col + cols, row + rows) as f64 / 255.0
    }

    /// Determinant of the box-filter Hessian with side `l` at `(r, c)`.
    fn hessian(&self, r: i64, c: i64, side: usize) -> f32 {
        let w = side as i64;
        let b = (w - 1) / 2;
        let l = w / 3;
        let inv_area = 1.0 / (w * w) as f64;
        let dxx = self.boxed(r - l + 1, c - b, 2 * l - 1, w) - 3.0 * self.boxed(r - l + 1, c - l / 2, 2 * l - 1, l);
        let dyy = self.boxed(r - b, c - l + 1, w, 2 * l - 1) - 3.0 * self.boxed(r - l / 2, c - l + 1, l, 2 * l - 1);
        let dxy = self.boxed(r - l, c + 1, l, l) + self.boxed(r + 1, c - l, l, l)
            - self.boxed(r - l, c - l, l, l)
            - self.boxed(r + 1, c + 1, l, l);
        let (dxx, dyy, dxy) = (dxx * inv_area, dyy * inv_area, dxy * inv_area);
        (dxx * dyy - 0.81 * dxy * dxy) as f32
    }

    fn support_ok(&self, x: i64, y: i64, rad: i64) -> bool {
        let (w, h) = (self.gray.width() as i64, self.gray.height() as i64);
        if x - rad < 0 || y - rad < 0 || x + rad >= w || y + rad >= h {
            return false;
        }
        let (x0, y0) = ((x - rad) as usize, (y - rad) as usize);
        let (x1, y1) = ((x + rad + 1) as usize, (y + rad + 1) as usize);
        self.invalid.box_sum(x0, y0, x1, y1) == 0
    }
}

struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ResponseMap {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }
}

fn response_map(planes: &Planes, side: usize, step: usize) -> ResponseMap {
    let width = planes.gray.width().div_ceil(step);
    let height = planes.gray.height().div_ceil(step);
    let mut data = vec![0f32; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = planes.hessian((r * step) as i64, (c * step) as i64, side);
        }
    });
    ResponseMap { width, height, data }
}

/// Scale-space maxima of the box-filter Hessian determinant inside `region`.
///
/// Keypoints are in frame coordinates, ordered by response (descending), then
/// `y`, then `x`. Keypoints whose filter support leaves the region or touches
/// a masked pixel are dropped.
pub fn detect(frame: &Frame, region: &Region, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    if region.width() < MIN_REGION || region.height() < MIN_REGION {
        return Err(StitchError::RegionTooSmall {
            width: region.width(),
            height: region.height(),
            min: MIN_REGION,
        });
    }
    let crop = frame.crop(region)?;
    let (w, h) = (crop.width(), crop.height());
    let invalid: Vec<u8> = crop.mask_or_full().iter().map(|&m| u8::from(!m)).collect();
    let planes = Planes {
        gray: IntegralImage::new(&crop.luma_u8(), w, h),
        invalid: IntegralImage::new(&invalid, w, h),
    };

    let mut out = Vec::new();
    for &(sides, step) in OCTAVES.iter().take(cfg.octaves.clamp(1, OCTAVES.len())) {
        let maps: Vec<ResponseMap> = sides.iter().map(|&s| response_map(&planes, s, step)).collect();
        let (mw, mh) = (maps[0].width, maps[0].height);
        for layer in 1..3 {
            let (below, mid, above) = (&maps[layer - 1], &maps[layer], &maps[layer + 1]);
            let rad = ((sides[layer + 1] - 1) / 2 + 1 + step) as i64;
            for r in 1..mh.saturating_sub(1) {
                for c in 1..mw.saturating_sub(1) {
                    let v = mid.at(r, c);
                    if (v as f64) <= cfg.threshold {
                        continue;
                    }
                    let mut is_max = true;
                    'nb: for m in [below, mid, above] {
                        for dr in 0..3 {
                            for dc in 0..3 {
                                let same = std::ptr::eq(m, mid) && dr == 1 && dc == 1;
                                if !same && m.at(r + dr - 1, c + dc - 1) >= v {
                                    is_max = false;
                                    break 'nb;
                                }
                            }
                        }
                    }
                    if !is_max {
                        continue;
                    }
                    let (px, py) = ((c * step) as i64, (r * step) as i64);
                    if !planes.support_ok(px, py, rad) {
                        continue;
                    }
                    let offset = if cfg.interpolate {
                        interpolate(below, mid, above, r, c)
                    } else {
                        None
                    };
                    let (ox, oy, os) = offset.unwrap_or((0.0, 0.0, 0.0));
                    let spacing = (sides[layer + 1] - sides[layer]) as f64;
                    let side = sides[layer] as f64 + os * spacing;
                    out.push(Keypoint {
                        x: (c as f64 + ox) * step as f64 + region.x0 as f64,
                        y: (r as f64 + oy) * step as f64 + region.y0 as f64,
                        scale: 1.2 * side / 9.0,
                        response: v as f64,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    Ok(out)
}

/// Quadratic peak offset `(dx, dy, dscale)` in map units, when it stays
/// within half a sample of the integer maximum.
fn interpolate(
    below: &ResponseMap,
    mid: &ResponseMap,
    above: &ResponseMap,
    r: usize,
    c: usize,
) -> Option<(f64, f64, f64)> {
    let v = |m: &ResponseMap, dr: isize, dc: isize| m.at((r as isize + dr) as usize, (c as isize + dc) as usize) as f64;
    let center = v(mid, 0, 0);
    let dx = (v(mid, 0, 1) - v(mid, 0, -1)) / 2.0;
    let dy = (v(mid, 1, 0) - v(mid, -1, 0)) / 2.0;
    let ds = (v(above, 0, 0) - v(below, 0, 0)) / 2.0;
    let dxx = v(mid, 0, 1) + v(mid, 0, -1) - 2.0 * center;
    let dyy = v(mid, 1, 0) + v(mid, -1, 0) - 2.0 * center;
    let dss = v(above, 0, 0) + v(below, 0, 0) - 2.0 * center;
    let dxy = (v(mid, 1, 1) - v(mid, 1, -1) - v(mid, -1, 1) + v(mid, -1, -1)) / 4.0;
    let dxs = (v(above, 0, 1) - v(above, 0, -1) - v(below, 0, 1) + v(below, 0, -1)) / 4.0;
    let dys = (v(above, 1, 0) - v(above, -1, 0) - v(below, 1, 0) + v(below, -1, 0)) / 4.0;
    let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let g = Vector3::new(dx, dy, ds);
    let o = -(hess.try_inverse()? * g);
    if o.iter().all(|v| v.is_finite() && v.abs() < 0.5) {
        Some((o.x, o.y, o.z))
    } else {
        None
    }
}
