//! Frames, regions and the resampling primitives every stage builds on.
//!
//! A [`Frame`] is an 8-bit RGB raster with an optional per-pixel validity
//! mask. Warping produces partial coverage, so every consumer of a frame is
//! expected to skip masked-out pixels.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Result, StitchError};

/// Round half away from zero and clamp to the 8-bit range.
#[inline]
pub fn to_level(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

/// Rec. 601 luma of an RGB triple.
#[inline]
pub fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(StitchError::EmptyRegion(format!("[{x0},{x1})x[{y0},{y1})")));
        }
        Ok(Region { x0, y0, x1, y1 })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Region {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// True when the region lies inside a `width x height` raster.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub(crate) fn check_within(&self, frame: &Frame) -> Result<()> {
        if self.fits(frame.width(), frame.height()) {
            Ok(())
        } else {
            Err(StitchError::ShapeMismatch(format!(
                "region {self} outside {}x{} frame",
                frame.width(),
                frame.height()
            )))
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})x[{},{})", self.x0, self.x1, self.y0, self.y1)
    }
}

/// Result of [`sample_bilinear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub rgb: [f64; 3],
    pub valid: bool,
}

impl Sample {
    pub const INVALID: Sample = Sample {
        rgb: [0.0; 3],
        valid: false,
    };
}

/// 8-bit RGB raster, row-major, with an optional validity mask.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
    mask: Option<Vec<bool>>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("masked", &self.mask.is_some())
            .finish()
    }
}

impl Frame {
    /// Black, fully valid frame.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "frame dimensions must be >= 1");
        Frame {
            width,
            height,
            data: vec![0; width * height * 3],
            mask: None,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut f = Frame::new(width, height);
        for px in f.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        f
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(StitchError::InvalidFrame(format!("{width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(StitchError::InvalidFrame(format!(
                "{} bytes for a {width}x{height} RGB frame",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
            mask: None,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut out = Frame::new(width, height);
        for y in 0..height {
            for x in 0..width {
                out.set_pixel(x, y, f(x, y));
            }
        }
        out
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        self.set_mask(Some(mask))?;
        Ok(self)
    }

    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.width * self.height {
                return Err(StitchError::InvalidFrame(format!(
                    "mask of {} entries for a {}x{} frame",
                    m.len(),
                    self.width,
                    self.height
                )));
            }
        }
        self.mask = mask;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        match &self.mask {
            Some(m) => m[y * self.width + x],
            None => true,
        }
    }

    pub fn valid_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&v| v).count(),
            None => self.width * self.height,
        }
    }

    /// Mask as an owned vector; all-true when the frame has no mask.
    pub fn mask_or_full(&self) -> Vec<bool> {
        self.mask
            .clone()
            .unwrap_or_else(|| vec![true; self.width * self.height])
    }

    /// Copy of `region` as a standalone frame, mask included.
    pub fn crop(&self, region: &Region) -> Result<Frame> {
        region.check_within(self)?;
        let (w, h) = (region.width(), region.height());
        let mut data = Vec::with_capacity(w * h * 3);
        for y in region.y0..region.y1 {
            let start = (y * self.width + region.x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        let mask = self.mask.as_ref().map(|m| {
            let mut out = Vec::with_capacity(w * h);
            for y in region.y0..region.y1 {
                let start = y * self.width + region.x0;
                out.extend_from_slice(&m[start..start + w]);
            }
            out
        });
        Ok(Frame {
            width: w,
            height: h,
            data,
            mask,
        })
    }

    /// Write `patch` into this frame at `(x0, y0)`. Only pixels valid in the
    /// patch are copied.
    pub fn paste(&mut self, patch: &Frame, x0: usize, y0: usize) -> Result<()> {
        let region = Region::new(x0, y0, x0 + patch.width, y0 + patch.height)?;
        region.check_within(self)?;
        for y in 0..patch.height {
            for x in 0..patch.width {
                if patch.is_valid(x, y) {
                    self.set_pixel(x0 + x, y0 + y, patch.pixel(x, y));
                }
            }
        }
        Ok(())
    }

    /// Rec. 601 luma plane as `f32`, row-major.
    pub fn luma_f32(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]) as f32)
            .collect()
    }

    /// Rec. 601 luma plane rounded to 8 bits.
    pub fn luma_u8(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .map(|p| to_level(luma([p[0] as f64, p[1] as f64, p[2] as f64])))
            .collect()
    }

    /// Apply `f` to every valid pixel in `region`, row-parallel.
    pub(crate) fn map_region(&self, region: &Region, f: impl Fn([u8; 3]) -> [u8; 3] + Sync) -> Result<Frame> {
        region.check_within(self)?;
        let mut out = self.clone();
        let width = self.width;
        let mask = self.mask.as_deref();
        out.data
            .par_chunks_mut(width * 3)
            .enumerate()
            .filter(|(y, _)| *y >= region.y0 && *y < region.y1)
            .for_each(|(y, row)| {
                for x in region.x0..region.x1 {
                    if mask.is_some_and(|m| !m[y * width + x]) {
                        continue;
                    }
                    let px = &mut row[x * 3..x * 3 + 3];
                    let mapped = f([px[0], px[1], px[2]]);
                    px.copy_from_slice(&mapped);
                }
            });
        Ok(out)
    }
}

/// Bilinear sample at real coordinates, where `(x, y)` = `(0, 0)` is the
/// centre of the top-left pixel.
///
/// Neighbours outside the frame or masked out are dropped and the remaining
/// weights renormalised; the sample is invalid when nothing contributes.
pub fn sample_bilinear(frame: &Frame, x: f64, y: f64) -> Sample {
    if !x.is_finite() || !y.is_finite() {
        return Sample::INVALID;
    }
    let fx = x.floor();
    let fy = y.floor();
    let ax = x - fx;
    let ay = y - fy;
    let x0 = fx as i64;
    let y0 = fy as i64;
    let (w, h) = (frame.width as i64, frame.height as i64);

    let taps = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1, y0, ax * (1.0 - ay)),
        (x0, y0 + 1, (1.0 - ax) * ay),
        (x0 + 1, y0 + 1, ax * ay),
    ];
    let mut acc = [0.0f64; 3];
    let mut wsum = 0.0;
    for (tx, ty, wt) in taps {
        if wt <= 0.0 || tx < 0 || ty < 0 || tx >= w || ty >= h {
            continue;
        }
        let (ux, uy) = (tx as usize, ty as usize);
        if !frame.is_valid(ux, uy) {
            continue;
        }
        let p = frame.pixel(ux, uy);
        for c in 0..3 {
            acc[c] += wt * p[c] as f64;
        }
        wsum += wt;
    }
    if wsum <= 1e-12 {
        return Sample::INVALID;
    }
    if (wsum - 1.0).abs() > 1e-15 {
        for a in &mut acc {
            *a /= wsum;
        }
    }
    Sample { rgb: acc, valid: true }
}

/// Bilinear sample of a single-channel `f32` plane with edge clamping.
#[inline]
pub(crate) fn sample_plane(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = x - x0 as f32;
    let ay = y - y0 as f32;
    let top = plane[y0 * width + x0] * (1.0 - ax) + plane[y0 * width + x1] * ax;
    let bot = plane[y1 * width + x0] * (1.0 - ax) + plane[y1 * width + x1] * ax;
    top * (1.0 - ay) + bot * ay
}
