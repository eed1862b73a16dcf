//! Spatio-temporal color transfer between overlapping views.
//!
//! Histogram specification pulls the source overlap towards the reference
//! overlap per channel. A 3x3 cross-channel matrix `M` is then fitted by least
//! squares over a short temporal window of pixel pairs and applied to the
//! source. Stacking up to three frames damps single-frame disturbances; a
//! window of length one is the plain single-frame fit.
//!
//! [`TransferMode`] selects what the window pairs hold: specified source
//! against the reference (the default, output `M` applied after the lookup
//! table), or raw source against its specified version (output `source * M`).

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StitchError};
use crate::frame::{to_level, Frame, Region};
use crate::histogram::Histogram256;

/// Longest temporal window: frames T, T-1 and T-2.
pub const MAX_WINDOW: usize = 3;

/// Relative eigenvalue floor of the normal matrix below which the fit is
/// rejected.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Per-channel 256-entry level mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecificationLut {
    pub table: [[u8; 256]; 3],
}

impl SpecificationLut {
    pub fn identity() -> Self {
        let mut row = [0u8; 256];
        for (v, e) in row.iter_mut().enumerate() {
            *e = v as u8;
        }
        SpecificationLut { table: [row; 3] }
    }

    #[inline]
    pub fn map(&self, rgb: [u8; 3]) -> [u8; 3] {
        [
            self.table[0][rgb[0] as usize],
            self.table[1][rgb[1] as usize],
            self.table[2][rgb[2] as usize],
        ]
    }

    pub fn is_monotone(&self) -> bool {
        self.table.iter().all(|t| t.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Classic CDF matching: `lut[v]` is the smallest `u` whose reference CDF
/// reaches the source CDF at `v`.
///
/// The comparison `ref_cum[u] / ref_total >= src_cum[v] / src_total` is done
/// by integer cross-multiplication, so plateaus resolve exactly.
pub fn histogram_specification(source: &Histogram256, reference: &Histogram256) -> Result<SpecificationLut> {
    if source.total == 0 || reference.total == 0 {
        return Err(StitchError::EmptyHistogram);
    }
    let src_cum = source.cumulative();
    let ref_cum = reference.cumulative();
    let (st, rt) = (source.total as u128, reference.total as u128);
    let mut table = [[0u8; 256]; 3];
    for c in 0..3 {
        let mut u = 0usize;
        for v in 0..256 {
            let need = src_cum[c][v] as u128 * rt;
            // the source CDF is nondecreasing, so the search resumes at u
            while u < 255 && (ref_cum[c][u] as u128) * st < need {
                u += 1;
            }
            table[c][v] = u as u8;
        }
    }
    Ok(SpecificationLut { table })
}

/// Remap the valid pixels of `region` through `lut`.
pub fn apply_lut(frame: &Frame, region: &Region, lut: &SpecificationLut) -> Result<Frame> {
    frame.map_region(region, |p| lut.map(p))
}

/// Cross-channel transform acting on RGB row vectors: `out = rgb * m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorMatrix {
    pub m: [[f64; 3]; 3],
    /// Smallest over largest eigenvalue of the normal matrix the fit came
    /// from; 1 for matrices that were not fitted.
    pub conditioning: f64,
}

impl ColorMatrix {
    pub fn identity() -> Self {
        ColorMatrix::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        ColorMatrix { m, conditioning: 1.0 }
    }

    #[inline]
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            rgb[0] * m[0][0] + rgb[1] * m[1][0] + rgb[2] * m[2][0],
            rgb[0] * m[0][1] + rgb[1] * m[1][1] + rgb[2] * m[2][1],
            rgb[0] * m[0][2] + rgb[1] * m[1][2] + rgb[2] * m[2][2],
        ]
    }

    #[inline]
    pub fn apply_u8(&self, rgb: [u8; 3]) -> [u8; 3] {
        let out = self.apply([rgb[0] as f64, rgb[1] as f64, rgb[2] as f64]);
        [to_level(out[0]), to_level(out[1]), to_level(out[2])]
    }

    /// Row-major 9-element form used in reports.
    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }
}

/// One frame's worth of paired overlap pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowEntry {
    pub source: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 3]>,
}

impl WindowEntry {
    pub fn new(source: Vec<[f64; 3]>, reference: Vec<[f64; 3]>) -> Result<Self> {
        if source.len() != reference.len() {
            return Err(StitchError::ShapeMismatch(format!(
                "window entry has {} source rows and {} reference rows",
                source.len(),
                reference.len()
            )));
        }
        Ok(WindowEntry { source, reference })
    }

    pub fn rows(&self) -> usize {
        self.source.len()
    }
}

/// Newest-first stack of at most `capacity` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferWindow {
    entries: VecDeque<WindowEntry>,
    capacity: usize,
}

impl Default for TransferWindow {
    fn default() -> Self {
        TransferWindow::new(MAX_WINDOW)
    }
}

impl TransferWindow {
    /// `capacity` is clamped to `1..=3`.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.clamp(1, MAX_WINDOW);
        TransferWindow {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// Insert as the newest entry, evicting the oldest beyond capacity.
    pub fn push(&mut self, entry: WindowEntry) {
        self.entries.push_front(entry);
        self.entries.truncate(self.capacity);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Least-squares `M` minimising `|S M - R|_F` over every stacked entry.
///
/// Normal matrices are accumulated in a fixed order (newest entry first,
/// rows in order), so the result is reproducible bit for bit. They are
/// divided by the number of entries before solving: integer-valued pixel rows
/// sum exactly, so a window of identical entries solves to the same bits as a
/// single entry.
pub fn solve_color_matrix(window: &TransferWindow) -> Result<ColorMatrix> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [[0.0f64; 3]; 3];
    let mut rows = 0usize;
    for entry in window.entries() {
        if entry.source.len() != entry.reference.len() {
            return Err(StitchError::ShapeMismatch("unpaired window rows".into()));
        }
        for (s, r) in entry.source.iter().zip(&entry.reference) {
            for i in 0..3 {
                for k in 0..3 {
                    ata[i][k] += s[i] * s[k];
                    atb[i][k] += s[i] * r[k];
                }
            }
        }
        rows += entry.rows();
    }
    if rows < 3 {
        return Err(StitchError::RankDeficient { ratio: 0.0 });
    }
    let scale = window.len() as f64;
    let a = Matrix3::from_fn(|i, k| ata[i][k] / scale);
    let b = Matrix3::from_fn(|i, k| atb[i][k] / scale);
    let eig = SymmetricEigen::new(a).eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = if max > 0.0 { (min / max).max(0.0) } else { 0.0 };
    if !(max > 0.0) || min < RANK_TOLERANCE * max {
        return Err(StitchError::RankDeficient { ratio });
    }
    let inv = a.try_inverse().ok_or(StitchError::RankDeficient { ratio })?;
    let m = inv * b;
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (k, e) in row.iter_mut().enumerate() {
            *e = m[(i, k)];
        }
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StitchError::RankDeficient { ratio });
    }
    Ok(ColorMatrix {
        m: out,
        conditioning: ratio,
    })
}

/// Single-frame fit `M = (S^T S)^-1 S^T R`; the window-of-one special case.
pub fn solve_pair(source: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<ColorMatrix> {
    let mut w = TransferWindow::new(1);
    w.push(WindowEntry::new(source.to_vec(), reference.to_vec())?);
    solve_color_matrix(&w)
}

/// Multiply each valid pixel of `region` by `m`, rounding and clamping.
pub fn apply_color_matrix(frame: &Frame, region: &Region, m: &ColorMatrix) -> Result<Frame> {
    frame.map_region(region, |p| m.apply_u8(p))
}

/// Histogram specification followed by the color matrix, in one pass.
pub fn apply_correction(frame: &Frame, region: &Region, lut: &SpecificationLut, m: &ColorMatrix) -> Result<Frame> {
    frame.map_region(region, |p| m.apply_u8(lut.map(p)))
}

/// Which pixel pairs feed the matrix fit, and how the fit is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Fit specified source to reference; output is the lookup followed by `M`.
    #[default]
    LutThenMatrix,
    /// Fit raw source to specified source; output is `source * M`.
    MatrixOnly,
}

/// Result of fitting one frame pair.
#[derive(Debug, Clone)]
pub struct TransferFit {
    pub lut: SpecificationLut,
    pub matrix: ColorMatrix,
    /// True when the least-squares fit was rank deficient and `matrix` fell
    /// back to the identity.
    pub degraded: bool,
    pub mode: TransferMode,
}

impl TransferFit {
    /// Pass-through fit, used when a pair cannot be fitted at all.
    pub fn identity(mode: TransferMode) -> Self {
        Self {
            lut: SpecificationLut::identity(),
            matrix: ColorMatrix::identity(),
            degraded: true,
            mode,
        }
    }

    /// Correct the valid pixels of `region`.
    pub fn apply(&self, frame: &Frame, region: &Region) -> Result<Frame> {
        match self.mode {
            TransferMode::MatrixOnly => apply_color_matrix(frame, region, &self.matrix),
            TransferMode::LutThenMatrix => apply_correction(frame, region, &self.lut, &self.matrix),
        }
    }
}

/// Overlap pixels valid in both frames, as paired rows in raster order.
pub fn gather_pairs(
    source: &Frame,
    reference: &Frame,
    overlap_src: &Region,
    overlap_ref: &Region,
) -> Result<(Vec<[u8; 3]>, Vec<[u8; 3]>)> {
    overlap_src.check_within(source)?;
    overlap_ref.check_within(reference)?;
    if overlap_src.width() != overlap_ref.width() || overlap_src.height() != overlap_ref.height() {
        return Err(StitchError::ShapeMismatch(format!(
            "overlaps {overlap_src} and {overlap_ref} differ in size"
        )));
    }
    let mut s = Vec::new();
    let mut r = Vec::new();
    for dy in 0..overlap_src.height() {
        for dx in 0..overlap_src.width() {
            let (sx, sy) = (overlap_src.x0 + dx, overlap_src.y0 + dy);
            let (rx, ry) = (overlap_ref.x0 + dx, overlap_ref.y0 + dy);
            if source.is_valid(sx, sy) && reference.is_valid(rx, ry) {
                s.push(source.pixel(sx, sy));
                r.push(reference.pixel(rx, ry));
            }
        }
    }
    if s.is_empty() {
        return Err(StitchError::EmptyRegion(overlap_src.to_string()));
    }
    Ok((s, r))
}

fn rows_f64(px: &[[u8; 3]]) -> Vec<[f64; 3]> {
    px.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect()
}

/// Fit the histogram specification and color matrix for the current frame,
/// pushing the new pair into `window`.
pub fn transfer_fit(
    source: &Frame,
    reference: &Frame,
    overlap_src: &Region,
    overlap_ref: &Region,
    window: &mut TransferWindow,
    mode: TransferMode,
) -> Result<TransferFit> {
    let (s, r) = gather_pairs(source, reference, overlap_src, overlap_ref)?;
    let mut hs = Histogram256::default();
    let mut hr = Histogram256::default();
    for (a, b) in s.iter().zip(&r) {
        hs.add(*a);
        hr.add(*b);
    }
    let lut = histogram_specification(&hs, &hr)?;
    let revised: Vec<[u8; 3]> = s.iter().map(|&p| lut.map(p)).collect();
    let entry = match mode {
        TransferMode::MatrixOnly => WindowEntry::new(rows_f64(&s), rows_f64(&revised))?,
        TransferMode::LutThenMatrix => WindowEntry::new(rows_f64(&revised), rows_f64(&r))?,
    };
    window.push(entry);
    let (matrix, degraded) = match solve_color_matrix(window) {
        Ok(m) => (m, false),
        Err(StitchError::RankDeficient { ratio }) => (
            ColorMatrix {
                conditioning: ratio,
                ..ColorMatrix::identity()
            },
            true,
        ),
        Err(e) => return Err(e),
    };
    Ok(TransferFit {
        lut,
        matrix,
        degraded,
        mode,
    })
}

/// One full correction step on the source overlap.
#[derive(Debug, Clone)]
pub struct TransferStep {
    pub corrected: Frame,
    pub window: TransferWindow,
    pub fit: TransferFit,
}

/// Histograms, specification, window update, matrix fit and application to
/// the source overlap. The window is taken by value and returned updated.
pub fn transfer_step(
    source: &Frame,
    reference: &Frame,
    overlap_src: &Region,
    overlap_ref: &Region,
    window: TransferWindow,
) -> Result<TransferStep> {
    transfer_step_with(
        source,
        reference,
        overlap_src,
        overlap_ref,
        window,
        TransferMode::default(),
    )
}

/// [`transfer_step`] with an explicit [`TransferMode`].
pub fn transfer_step_with(
    source: &Frame,
    reference: &Frame,
    overlap_src: &Region,
    overlap_ref: &Region,
    mut window: TransferWindow,
    mode: TransferMode,
) -> Result<TransferStep> {
    let fit = transfer_fit(source, reference, overlap_src, overlap_ref, &mut window, mode)?;
    let corrected = fit.apply(source, overlap_src)?;
    Ok(TransferStep { corrected, window, fit })
}
