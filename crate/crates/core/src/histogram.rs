//! Per-channel 256-bin histograms and their cumulative distributions.

use crate::error::{Result, StitchError};
use crate::frame::{Frame, Region};

/// Per-channel level counts over a set of pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub bins: [[u64; 256]; 3],
    pub total: u64,
}

impl std::fmt::Debug for Histogram256 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Histogram256")
            .field("total", &self.total)
            .finish_non_exhaustive()
    }
}

impl Default for Histogram256 {
    fn default() -> Self {
        Histogram256 {
            bins: [[0; 256]; 3],
            total: 0,
        }
    }
}

impl Histogram256 {
    /// Build a histogram whose three channels all share `bins`.
    pub fn from_gray_bins(bins: [u64; 256]) -> Self {
        let total = bins.iter().sum();
        Histogram256 { bins: [bins; 3], total }
    }

    pub fn from_channel_bins(bins: [[u64; 256]; 3]) -> Result<Self> {
        let total: u64 = bins[0].iter().sum();
        if bins.iter().any(|b| b.iter().sum::<u64>() != total) {
            return Err(StitchError::ShapeMismatch(
                "channel histograms have different totals".into(),
            ));
        }
        Ok(Histogram256 { bins, total })
    }

    pub fn add(&mut self, rgb: [u8; 3]) {
        for (c, &v) in rgb.iter().enumerate() {
            self.bins[c][v as usize] += 1;
        }
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram256) {
        for c in 0..3 {
            for v in 0..256 {
                self.bins[c][v] += other.bins[c][v];
            }
        }
        self.total += other.total;
    }

    /// Running counts per channel; the last entry equals `total`.
    pub fn cumulative(&self) -> [[u64; 256]; 3] {
        let mut out = [[0u64; 256]; 3];
        for c in 0..3 {
            let mut acc = 0;
            for v in 0..256 {
                acc += self.bins[c][v];
                out[c][v] = acc;
            }
        }
        out
    }
}

/// Counts over the valid pixels of `region`.
pub fn compute_histogram(frame: &Frame, region: &Region) -> Result<Histogram256> {
    region.check_within(frame)?;
    let mut hist = Histogram256::default();
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            if frame.is_valid(x, y) {
                hist.add(frame.pixel(x, y));
            }
        }
    }
    if hist.total == 0 {
        return Err(StitchError::EmptyRegion(region.to_string()));
    }
    Ok(hist)
}

/// Histogram of every valid pixel of the frame.
pub fn frame_histogram(frame: &Frame) -> Result<Histogram256> {
    compute_histogram(frame, &Region::full(frame.width(), frame.height()))
}

/// Per-channel cumulative distribution in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf(pub [[f64; 256]; 3]);

impl Cdf {
    pub fn channel(&self, c: usize) -> &[f64; 256] {
        &self.0[c]
    }
}

/// Normalised running sum. The final entry is exactly 1.0 because the running
/// count reaches `total` exactly.
pub fn cdf(hist: &Histogram256) -> Result<Cdf> {
    if hist.total == 0 {
        return Err(StitchError::EmptyHistogram);
    }
    let cum = hist.cumulative();
    let total = hist.total as f64;
    let mut out = [[0.0; 256]; 3];
    for c in 0..3 {
        for v in 0..256 {
            out[c][v] = cum[c][v] as f64 / total;
        }
    }
    Ok(Cdf(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut s = seed;
        Frame::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            [(s >> 33) as u8, (s >> 41) as u8, (s >> 49) as u8]
        })
    }

    #[test]
    fn constant_region() {
        let f = Frame::filled(20, 20, [128, 128, 128]);
        let h = compute_histogram(&f, &Region::new(5, 5, 15, 15).unwrap()).unwrap();
        for c in 0..3 {
            assert_eq!(h.bins[c][128], 100);
            assert_eq!(h.bins[c].iter().sum::<u64>(), 100);
        }
    }

    #[test]
    fn two_pixel_frame() {
        let mut f = Frame::new(1, 2);
        f.set_pixel(0, 1, [255, 255, 255]);
        let h = frame_histogram(&f).unwrap();
        for c in 0..3 {
            assert_eq!(h.bins[c][0], 1);
            assert_eq!(h.bins[c][255], 1);
        }
        assert_eq!(h.total, 2);
    }

    #[test]
    fn masked_pixels_are_skipped() {
        let f = Frame::filled(2, 2, [1, 2, 3])
            .with_mask(vec![true, false, false, false])
            .unwrap();
        assert_eq!(frame_histogram(&f).unwrap().total, 1);
        let empty = Frame::new(2, 2).with_mask(vec![false; 4]).unwrap();
        assert!(matches!(frame_histogram(&empty), Err(StitchError::EmptyRegion(_))));
    }

    #[test]
    fn random_frame_matches_tally_loop() {
        let f = lcg_frame(64, 64, 7);
        let h = frame_histogram(&f).unwrap();
        let mut tally = vec![[0u64; 256]; 3];
        for p in f.data().chunks_exact(3) {
            for c in 0..3 {
                tally[c][p[c] as usize] += 1;
            }
        }
        for c in 0..3 {
            assert_eq!(h.bins[c], tally[c]);
        }
    }

    #[test]
    fn cdf_closed_forms() {
        let mut point = [0u64; 256];
        point[0] = 17;
        let c = cdf(&Histogram256::from_gray_bins(point)).unwrap();
        assert!(c.channel(0).iter().all(|&v| v == 1.0));

        let c = cdf(&Histogram256::from_gray_bins([3; 256])).unwrap();
        for v in 0..256 {
            assert!((c.channel(1)[v] - (v + 1) as f64 / 256.0).abs() < 1e-15);
        }
        assert_eq!(c.channel(2)[255], 1.0);
        assert!(matches!(
            cdf(&Histogram256::default()),
            Err(StitchError::EmptyHistogram)
        ));
    }

    proptest! {
        #[test]
        fn cdf_matches_prefix_sums(bins in proptest::collection::vec(0u64..50, 256)) {
            let mut arr = [0u64; 256];
            arr.copy_from_slice(&bins);
            arr[200] += 1;
            let h = Histogram256::from_gray_bins(arr);
            let c = cdf(&h).unwrap();
            let total: u64 = arr.iter().sum();
            let mut run = 0u64;
            for v in 0..256 {
                run += arr[v];
                prop_assert_eq!(c.channel(0)[v], run as f64 / total as f64);
                if v > 0 {
                    prop_assert!(c.channel(0)[v] >= c.channel(0)[v - 1]);
                }
            }
            prop_assert_eq!(c.channel(0)[255], 1.0);
        }

        #[test]
        fn totals_equal_valid_pixel_counts(
            w in 1usize..24, h in 1usize..24, seed in any::<u64>(),
            rx in 0usize..24, ry in 0usize..24, rw in 1usize..24, rh in 1usize..24,
        ) {
            let mut f = lcg_frame(w, h, seed);
            let mask: Vec<bool> = (0..w * h).map(|i| !(i as u64 ^ seed).is_multiple_of(3)).collect();
            f.set_mask(Some(mask.clone())).unwrap();
            let x0 = rx % w;
            let y0 = ry % h;
            let r = Region::new(x0, y0, (x0 + rw).min(w), (y0 + rh).min(h)).unwrap();
            let expected = (r.y0..r.y1)
                .flat_map(|y| (r.x0..r.x1).map(move |x| (x, y)))
                .filter(|&(x, y)| mask[y * w + x])
                .count() as u64;
            match compute_histogram(&f, &r) {
                Ok(hist) => {
                    prop_assert_eq!(hist.total, expected);
                    for c in 0..3 {
                        prop_assert_eq!(hist.bins[c].iter().sum::<u64>(), expected);
                    }
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
