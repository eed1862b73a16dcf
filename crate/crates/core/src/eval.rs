//! Quality metrics, window-1 vs window-3 comparison tables and timing tables.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::color_transfer::{transfer_fit, TransferMode, TransferWindow};
use crate::error::{Result, StitchError};
use crate::frame::{luma, Frame, Region};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR in dB; identical inputs give `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn from_db(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(v)
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Psnr;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Psnr, E> {
                Ok(Psnr::from_db(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Psnr, E> {
                Ok(Psnr::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Psnr, E> {
                Ok(Psnr::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Psnr, E> {
                let x: f64 = v.parse().map_err(|_| E::custom(format!("bad PSNR `{v}`")))?;
                Ok(Psnr::from_db(x))
            }
        }
        d.deserialize_any(V)
    }
}

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_shape(b) {
        return Err(StitchError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)` over jointly valid pixels, MSE averaged over
/// channels.
pub fn psnr(a: &Frame, b: &Frame) -> Result<Psnr> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    let mut sse = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !(a.is_valid(x, y) && b.is_valid(x, y)) {
                continue;
            }
            let (p, q) = (a.pixel(x, y), b.pixel(x, y));
            for c in 0..3 {
                let d = p[c] as f64 - q[c] as f64;
                sse += d * d;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(StitchError::EmptyRegion(Region::full(w, h).to_string()));
    }
    let mse = sse / (3 * n) as f64;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (255.0 * 255.0 / mse).log10()))
}

/// Normalised 1-D Gaussian taps of length `SSIM_WINDOW`.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

fn luma_plane(f: &Frame) -> Vec<f64> {
    f.data()
        .chunks_exact(3)
        .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]))
        .collect()
}

/// Mean SSIM on luma over all 11x11 windows lying inside the frame whose
/// pixels are valid in both inputs.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(StitchError::TooSmall(SSIM_WINDOW));
    }
    let la = luma_plane(a);
    let lb = luma_plane(b);
    let taps = gaussian_taps();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);

    // separable weighted moments: horizontal pass then vertical pass
    let planes: [Vec<f64>; 5] = [
        la.clone(),
        lb.clone(),
        la.iter().map(|v| v * v).collect(),
        lb.iter().map(|v| v * v).collect(),
        la.iter().zip(&lb).map(|(p, q)| p * q).collect(),
    ];
    let moments: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            let mut horiz = vec![0.0; ow * h];
            for y in 0..h {
                for x in 0..ow {
                    horiz[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * p[y * w + x + k]).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for y in 0..oh {
                for x in 0..ow {
                    out[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * horiz[(y + k) * ow + x]).sum();
                }
            }
            out
        })
        .collect();

    // invalid-pixel counts per window via a summed-area table
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let bad = !(a.is_valid(x, y) && b.is_valid(x, y)) as u32;
            sat[(y + 1) * (w + 1) + x + 1] =
                bad + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let bad_in = |x: usize, y: usize| {
        let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
        sat[y1 * (w + 1) + x1] + sat[y * (w + 1) + x] - sat[y * (w + 1) + x1] - sat[y1 * (w + 1) + x]
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..oh {
        for x in 0..ow {
            if bad_in(x, y) > 0 {
                continue;
            }
            let i = y * ow + x;
            let (ma, mb) = (moments[0][i], moments[1][i]);
            let va = moments[2][i] - ma * ma;
            let vb = moments[3][i] - mb * mb;
            let cov = moments[4][i] - ma * mb;
            total += ssim_formula(ma, mb, va, vb, cov);
            count += 1;
        }
    }
    if count == 0 {
        return Err(StitchError::EmptyRegion("no fully valid SSIM window".into()));
    }
    Ok(total / count as f64)
}

#[inline]
fn ssim_formula(ma: f64, mb: f64, va: f64, vb: f64, cov: f64) -> f64 {
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Arithmetic mean, accumulated as offsets from the first value.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Population standard deviation, two-pass.
pub fn std_population(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per-channel mean over valid pixels.
pub fn channel_means(frame: &Frame) -> [f64; 3] {
    let mut s = [0.0; 3];
    let mut n = 0usize;
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if frame.is_valid(x, y) {
                let p = frame.pixel(x, y);
                for c in 0..3 {
                    s[c] += p[c] as f64;
                }
                n += 1;
            }
        }
    }
    if n == 0 {
        return [0.0; 3];
    }
    s.map(|v| v / n as f64)
}

/// Row label of a metric table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    /// 1-based frame number.
    Frame(usize),
    Mean,
    Sigma,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Frame(i) => write!(f, "{i}"),
            RowLabel::Mean => f.write_str("mu"),
            RowLabel::Sigma => f.write_str("sigma"),
        }
    }
}

impl FromStr for RowLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mu" => Ok(RowLabel::Mean),
            "sigma" => Ok(RowLabel::Sigma),
            n => n
                .parse()
                .map(RowLabel::Frame)
                .map_err(|_| format!("bad row label `{s}`")),
        }
    }
}

impl Serialize for RowLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RowLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = RowLabel;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a frame number, \"mu\" or \"sigma\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RowLabel, E> {
                Ok(RowLabel::Frame(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RowLabel, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// One row of a window-1 vs window-3 comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scene: String,
    pub frame: RowLabel,
    pub method: String,
    /// Corrected source overlap against its uncorrected self.
    pub psnr_source: Psnr,
    /// Corrected source overlap against the reference overlap.
    pub psnr_reference: Psnr,
    /// Corrected source overlap against the reference overlap.
    pub ssim: f64,
    /// Per-channel mean of the corrected source view.
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
}

impl MetricRow {
    pub fn channel_means(&self) -> [f64; 3] {
        [self.mean_r, self.mean_g, self.mean_b]
    }
}

/// Source and reference views on a shared canvas plus their overlap.
#[derive(Debug, Clone)]
pub struct ColorSequence {
    pub scene: String,
    pub source: Vec<Frame>,
    pub reference: Vec<Frame>,
    pub overlap: Region,
}

pub fn method_label(window: usize) -> String {
    format!("window-{window}")
}

fn summarize_psnr(values: &[Psnr]) -> (Psnr, Psnr) {
    let finite: Vec<f64> = values
        .iter()
        .filter_map(|p| match p {
            Psnr::Finite(v) => Some(*v),
            Psnr::Infinite => None,
        })
        .collect();
    let mu = if finite.len() < values.len() {
        Psnr::Infinite
    } else {
        Psnr::Finite(mean(&finite))
    };
    (mu, Psnr::Finite(std_population(&finite)))
}

/// Per-frame metrics for one window length followed by mean and sigma rows.
///
/// The whole source view is corrected with the fitted transfer; PSNR
/// and SSIM are measured on the overlap.
pub fn compare_methods(seq: &ColorSequence, window_len: usize) -> Result<Vec<MetricRow>> {
    compare_methods_with(seq, window_len, TransferMode::default())
}

/// [`compare_methods`] with an explicit [`TransferMode`].
pub fn compare_methods_with(seq: &ColorSequence, window_len: usize, mode: TransferMode) -> Result<Vec<MetricRow>> {
    let n = seq.source.len();
    if n < 2 {
        return Err(StitchError::InputMismatch(format!("need at least 2 frames, got {n}")));
    }
    if seq.reference.len() != n {
        return Err(StitchError::InputMismatch(format!(
            "{n} source frames vs {} reference frames",
            seq.reference.len()
        )));
    }
    let method = method_label(window_len);
    let mut window = TransferWindow::new(window_len);
    let mut rows = Vec::with_capacity(n + 2);
    for (t, (src, rf)) in seq.source.iter().zip(&seq.reference).enumerate() {
        let fit = transfer_fit(src, rf, &seq.overlap, &seq.overlap, &mut window, mode)?;
        let corrected = fit.apply(src, &Region::full(src.width(), src.height()))?;
        let c_ov = corrected.crop(&seq.overlap)?;
        let s_ov = src.crop(&seq.overlap)?;
        let r_ov = rf.crop(&seq.overlap)?;
        let m = channel_means(&c_ov);
        rows.push(MetricRow {
            scene: seq.scene.clone(),
            frame: RowLabel::Frame(t + 1),
            method: method.clone(),
            psnr_source: psnr(&c_ov, &s_ov)?,
            psnr_reference: psnr(&c_ov, &r_ov)?,
            ssim: ssim(&c_ov, &r_ov)?,
            mean_r: m[0],
            mean_g: m[1],
            mean_b: m[2],
        });
    }
    let col = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let ps: Vec<Psnr> = rows.iter().map(|r| r.psnr_source).collect();
    let pr: Vec<Psnr> = rows.iter().map(|r| r.psnr_reference).collect();
    let (ps_mu, ps_sd) = summarize_psnr(&ps);
    let (pr_mu, pr_sd) = summarize_psnr(&pr);
    let ss = col(&|r| r.ssim);
    let mr = col(&|r| r.mean_r);
    let mg = col(&|r| r.mean_g);
    let mb = col(&|r| r.mean_b);
    let base = |frame, psnr_source, psnr_reference, agg: fn(&[f64]) -> f64| MetricRow {
        scene: seq.scene.clone(),
        frame,
        method: method.clone(),
        psnr_source,
        psnr_reference,
        ssim: agg(&ss),
        mean_r: agg(&mr),
        mean_g: agg(&mg),
        mean_b: agg(&mb),
    };
    let mu_row = base(RowLabel::Mean, ps_mu, pr_mu, mean);
    let sd_row = base(RowLabel::Sigma, ps_sd, pr_sd, std_population);
    rows.push(mu_row);
    rows.push(sd_row);
    Ok(rows)
}

/// Frame-to-frame sigma of the per-channel mean, averaged over channels.
pub fn temporal_sigma(rows: &[MetricRow]) -> f64 {
    let frames: Vec<&MetricRow> = rows.iter().filter(|r| matches!(r.frame, RowLabel::Frame(_))).collect();
    (0..3)
        .map(|c| std_population(&frames.iter().map(|r| r.channel_means()[c]).collect::<Vec<_>>()))
        .sum::<f64>()
        / 3.0
}

/// Mean SSIM over the frame rows.
pub fn mean_ssim(rows: &[MetricRow]) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| matches!(r.frame, RowLabel::Frame(_)))
        .map(|r| r.ssim)
        .collect();
    mean(&v)
}

/// Both methods, window 1 first.
pub fn comparison_table(seq: &ColorSequence) -> Result<Vec<MetricRow>> {
    let mut rows = compare_methods(seq, 1)?;
    rows.extend(compare_methods(seq, 3)?);
    Ok(rows)
}

/// Mean seconds per frame of each timed stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub geometric_warping: f64,
    pub color_correction: f64,
    pub local_warping: f64,
    pub image_blending: f64,
    pub color_balancing: f64,
}

impl StageTimes {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.geometric_warping,
            self.color_correction,
            self.local_warping,
            self.image_blending,
            self.color_balancing,
        ]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.as_array().iter().copied().fold(0.0, f64::max)
    }
}

/// Timing summary of one run, as consumed by [`timing_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub scene: String,
    pub threads: usize,
    pub frames: usize,
    /// Digest of the inputs and configuration the run was made on.
    pub input_digest: String,
    pub stages: StageTimes,
    /// Mean wall seconds per frame.
    pub all_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    #[serde(rename = "Scene")]
    pub scene: String,
    #[serde(rename = "Implementation")]
    pub implementation: String,
    #[serde(rename = "Threads")]
    pub threads: usize,
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
    #[serde(rename = "Speed-Up Ratio")]
    pub speedup_ratio: f64,
}

fn timing_row(s: &TimingSummary, implementation: &str, ratio: f64) -> TimingRow {
    TimingRow {
        scene: s.scene.clone(),
        implementation: implementation.to_string(),
        threads: s.threads,
        geometric_warping: s.stages.geometric_warping,
        color_correction: s.stages.color_correction,
        local_warping: s.stages.local_warping,
        image_blending: s.stages.image_blending,
        color_balancing: s.stages.color_balancing,
        all_time: s.all_time.max(s.stages.max()),
        speedup_ratio: ratio,
    }
}

/// Single-thread row and parallel row; the ratio is single total over
/// parallel total.
pub fn timing_table(single: &TimingSummary, parallel: &TimingSummary) -> Result<Vec<TimingRow>> {
    if single.input_digest != parallel.input_digest || single.frames != parallel.frames {
        return Err(StitchError::InputMismatch(format!(
            "runs differ: {} frames ({}) vs {} frames ({})",
            single.frames, single.input_digest, parallel.frames, parallel.input_digest
        )));
    }
    let s = timing_row(single, "single-thread", 1.0);
    let mut p = timing_row(parallel, "parallel", 1.0);
    p.speedup_ratio = if p.all_time > 0.0 { s.all_time / p.all_time } else { 1.0 };
    Ok(vec![s, p])
}

/// RFC 4180 CSV with a header row.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(StitchError::from)).collect()
}

pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| StitchError::InvalidFrame(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn psnr_oracle(a: &Frame, b: &Frame) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for (p, q) in a.data().iter().zip(b.data()) {
            s += (*p as f64 - *q as f64).powi(2);
            n += 1.0;
        }
        10.0 * (255.0f64.powi(2) / (s / n)).log10()
    }

    /// Direct 11x11 double loop per window.
    fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
        let (w, h) = (a.width(), a.height());
        let mut g = [[0.0; 11]; 11];
        let mut gs = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                gs += *v;
            }
        }
        let y = |f: &Frame, x: usize, yy: usize| {
            let p = f.pixel(x, yy);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut total = 0.0;
        let mut cnt = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / gs;
                        ma += wgt * y(a, x0 + j, y0 + i);
                        mb += wgt * y(b, x0 + j, y0 + i);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / gs;
                        let (p, q) = (y(a, x0 + j, y0 + i) - ma, y(b, x0 + j, y0 + i) - mb);
                        va += wgt * p * p;
                        vb += wgt * q * q;
                        cov += wgt * p * q;
                    }
                }
                let c1 = 6.5025;
                let c2 = 58.5225;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                cnt += 1.0;
            }
        }
        total / cnt
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Frame::filled(8, 8, [10, 20, 30]);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Infinite);
        let b = Frame::filled(8, 8, [11, 19, 31]);
        assert!((psnr(&a, &b).unwrap().db() - 48.1308).abs() < 1e-4);
        assert!(psnr(&a, &Frame::new(7, 8)).is_err());
        let none = Frame::new(8, 8).with_mask(vec![false; 64]).unwrap();
        assert!(matches!(psnr(&a, &none), Err(StitchError::EmptyRegion(_))));
    }

    #[test]
    fn metrics_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let w = rng.random_range(11..30);
            let h = rng.random_range(11..30);
            let a = random_frame(&mut rng, w, h);
            let b = random_frame(&mut rng, w, h);
            assert!((psnr(&a, &b).unwrap().db() - psnr_oracle(&a, &b)).abs() < 1e-9);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frame(&mut rng, 20, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let black = Frame::filled(16, 16, [0, 0, 0]);
        let white = Frame::filled(16, 16, [255, 255, 255]);
        let want = SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        assert!((ssim(&black, &white).unwrap() - want).abs() < 1e-9);
        assert!((want - 1.0e-4).abs() < 1e-6);
        assert!(matches!(
            ssim(&Frame::new(10, 20), &Frame::new(10, 20)),
            Err(StitchError::TooSmall(11))
        ));
    }

    #[test]
    fn ssim_skips_windows_with_invalid_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 30, 12);
        let b = random_frame(&mut rng, 30, 12);
        let mask: Vec<bool> = (0..30 * 12).map(|i| i % 30 < 15).collect();
        let am = a.clone().with_mask(mask).unwrap();
        let ca = a.crop(&Region::new(0, 0, 15, 12).unwrap()).unwrap();
        let cb = b.crop(&Region::new(0, 0, 15, 12).unwrap()).unwrap();
        assert!((ssim(&am, &b).unwrap() - ssim(&ca, &cb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sigma_is_population() {
        let v = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(std_population(&v), 2.0);
        assert_eq!(std_population(&[3.0; 5]), 0.0);
    }

    fn constant_sequence() -> ColorSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = random_frame(&mut rng, 40, 30);
        let rf = Frame::from_fn(40, 30, |x, y| {
            let p = src.pixel(x, y);
            [p[0] / 2 + 20, p[1], p[2] / 3 + 100]
        });
        ColorSequence {
            scene: "const".into(),
            source: vec![src; 5],
            reference: vec![rf; 5],
            overlap: Region::new(10, 5, 38, 28).unwrap(),
        }
    }

    #[test]
    fn table_shape_and_constant_input() {
        let rows = comparison_table(&constant_sequence()).unwrap();
        assert_eq!(rows.len(), 14);
        for method in ["window-1", "window-3"] {
            let m: Vec<_> = rows.iter().filter(|r| r.method == method).collect();
            assert_eq!(m.len(), 7);
            assert_eq!(m[5].frame, RowLabel::Mean);
            let sd = m[6];
            assert_eq!(sd.frame, RowLabel::Sigma);
            assert_eq!(sd.ssim, 0.0);
            assert_eq!(sd.psnr_source, Psnr::Finite(0.0));
            assert_eq!(
                temporal_sigma(&rows.iter().filter(|r| r.method == method).cloned().collect::<Vec<_>>()),
                0.0
            );
        }
        assert!(compare_methods(
            &ColorSequence {
                source: vec![Frame::new(4, 4)],
                ..constant_sequence()
            },
            1
        )
        .is_err());
    }

    #[test]
    fn csv_round_trips() {
        let mut rows = comparison_table(&constant_sequence()).unwrap();
        rows[0].psnr_source = Psnr::Infinite;
        let text = to_csv_string(&rows).unwrap();
        let back: Vec<MetricRow> = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, rows);
        let json = serde_json::to_string(&rows).unwrap();
        let back: Vec<MetricRow> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rows);
    }

    fn summary(all: f64, digest: &str) -> TimingSummary {
        TimingSummary {
            scene: "s".into(),
            threads: 1,
            frames: 3,
            input_digest: digest.into(),
            stages: StageTimes {
                geometric_warping: all * 0.4,
                color_correction: all * 0.2,
                local_warping: all * 0.2,
                image_blending: all * 0.1,
                color_balancing: all * 0.1,
            },
            all_time: all,
        }
    }

    #[test]
    fn timing_ratios() {
        let t = timing_table(&summary(1.0, "x"), &summary(1.0, "x")).unwrap();
        assert_eq!(t[1].speedup_ratio, 1.0);
        let t = timing_table(&summary(1.0, "x"), &summary(0.5, "x")).unwrap();
        assert_eq!(t[1].speedup_ratio, 2.0);
        assert!(t.iter().all(|r| r.all_time >= r.geometric_warping));
        assert!(matches!(
            timing_table(&summary(1.0, "x"), &summary(1.0, "y")),
            Err(StitchError::InputMismatch(_))
        ));
        let text = to_csv_string(&t).unwrap();
        assert!(text.starts_with("Scene,Implementation,Threads,Geometric Warping,Color Correction,Local Warping,Image Blending,Color Balancing,All time,Speed-Up Ratio"));
        let back: Vec<TimingRow> = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_mask_invariant(seed in any::<u64>(), cut in 11usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_frame(&mut rng, 24, 14);
            let b = random_frame(&mut rng, 24, 14);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
            let mask: Vec<bool> = (0..24 * 14).map(|i| i % 24 < cut).collect();
            let am = a.clone().with_mask(mask.clone()).unwrap();
            let bm = b.clone().with_mask(mask).unwrap();
            let r = Region::new(0, 0, cut, 14).unwrap();
            let (ca, cb) = (a.crop(&r).unwrap(), b.crop(&r).unwrap());
            prop_assert!((psnr(&am, &bm).unwrap().db() - psnr(&ca, &cb).unwrap().db()).abs() < 1e-9);
            prop_assert!((ssim(&am, &bm).unwrap() - ssim(&ca, &cb).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn sigma_matches_naive(v in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let naive = (v.iter().map(|x| x * x).sum::<f64>() / n - m * m).max(0.0).sqrt();
            prop_assert!((std_population(&v) - naive).abs() < 1e-6 * (1.0 + naive));
        }
    }
}
