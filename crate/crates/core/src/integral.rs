//! Summed-area tables over an 8-bit grayscale plane.

/// `(width + 1) x (height + 1)` cumulative sums; row 0 and column 0 are zero.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<u64>,
    sq_sum: Vec<u64>,
}

impl IntegralImage {
    pub fn new(gray: &[u8], width: usize, height: usize) -> Self {
        assert_eq!(gray.len(), width * height, "gray plane size mismatch");
        let stride = width + 1;
        let mut sum = vec![0u64; stride * (height + 1)];
        let mut sq_sum = vec![0u64; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for x in 0..width {
                let v = gray[y * width + x] as u64;
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sq_sum[i] = sq_sum[i - stride] + row_sq;
            }
        }
        IntegralImage {
            width,
            height,
            sum,
            sq_sum,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn corner(table: &[u64], stride: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        table[y1 * stride + x1] + table[y0 * stride + x0] - table[y0 * stride + x1] - table[y1 * stride + x0]
    }

    /// Sum over the half-open box `[x0, x1) x [y0, y1)`. Empty boxes give 0.
    #[inline]
    pub fn box_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        Self::corner(&self.sum, self.width + 1, x0, y0, x1, y1)
    }

    #[inline]
    pub fn box_sq_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        Self::corner(&self.sq_sum, self.width + 1, x0, y0, x1, y1)
    }

    /// Box sum with signed coordinates clipped to the raster.
    #[inline]
    pub fn box_sum_clamped(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> u64 {
        let cx = |v: i64| v.clamp(0, self.width as i64) as usize;
        let cy = |v: i64| v.clamp(0, self.height as i64) as usize;
        self.box_sum(cx(x0), cy(y0), cx(x1), cy(y1))
    }

    /// Population variance over a box.
    pub fn box_variance(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let n = ((x1.saturating_sub(x0)) * (y1.saturating_sub(y0))) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let s = self.box_sum(x0, y0, x1, y1) as f64;
        let sq = self.box_sq_sum(x0, y0, x1, y1) as f64;
        (sq / n - (s / n) * (s / n)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thousand_random_boxes_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (53, 37);
        let gray: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let ii = IntegralImage::new(&gray, w, h);
        for _ in 0..1000 {
            let x0 = rng.random_range(0..=w);
            let x1 = rng.random_range(x0..=w);
            let y0 = rng.random_range(0..=h);
            let y1 = rng.random_range(y0..=h);
            let mut s = 0u64;
            let mut sq = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = gray[y * w + x] as u64;
                    s += v;
                    sq += v * v;
                }
            }
            assert_eq!(ii.box_sum(x0, y0, x1, y1), s);
            assert_eq!(ii.box_sq_sum(x0, y0, x1, y1), sq);
        }
    }

    #[test]
    fn clamped_and_variance() {
        let gray = vec![10u8; 16];
        let ii = IntegralImage::new(&gray, 4, 4);
        assert_eq!(ii.box_sum_clamped(-5, -5, 100, 2), 80);
        assert_eq!(ii.box_variance(0, 0, 4, 4), 0.0);
        let ii = IntegralImage::new(&[0, 255], 2, 1);
        assert!((ii.box_variance(0, 0, 2, 1) - 127.5f64.powi(2)).abs() < 1e-9);
    }
}
