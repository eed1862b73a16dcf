use rayon::prelude::*;

use super::{Descriptor, Keypoint};
use crate::frame::Frame;
use crate::integral::IntegralImage;

pub const DESCRIPTOR_LEN: usize = 64;

/// Upright descriptors: a `20s` window split into 4x4 cells, each summarising
/// Gaussian-weighted Haar responses as `(sum dx, sum dy, sum |dx|, sum |dy|)`.
pub fn describe(frame: &Frame, keypoints: &[Keypoint]) -> Vec<Descriptor> {
    let ii = IntegralImage::new(&frame.luma_u8(), frame.width(), frame.height());
    keypoints.par_iter().map(|k| describe_one(&ii, k)).collect()
}

fn haar(ii: &IntegralImage, x: i64, y: i64, half: i64) -> (f64, f64) {
    let b = |x0, y0, x1, y1| ii.box_sum_clamped(x0, y0, x1, y1) as f64;
    let dx = b(x, y - half, x + half, y + half) - b(x - half, y - half, x, y + half);
    let dy = b(x - half, y, x + half, y + half) - b(x - half, y - half, x + half, y);
    (dx / 255.0, dy / 255.0)
}

fn describe_one(ii: &IntegralImage, k: &Keypoint) -> Descriptor {
    let s = k.scale;
    let half = ((s).round() as i64).max(1);
    let sigma = 3.3 * s;
    let mut v = [0f64; DESCRIPTOR_LEN];
    for cy in 0..4 {
        for cx in 0..4 {
            let mut acc = [0f64; 4];
            for j in 0..5 {
                for i in 0..5 {
                    let ox = (-10 + cx * 5 + i) as f64 + 0.5;
                    let oy = (-10 + cy * 5 + j) as f64 + 0.5;
                    let sx = (k.x + ox * s).round() as i64;
                    let sy = (k.y + oy * s).round() as i64;
                    let g = (-(ox * ox + oy * oy) * s * s / (2.0 * sigma * sigma)).exp();
                    let (dx, dy) = haar(ii, sx, sy, half);
                    let (dx, dy) = (dx * g, dy * g);
                    acc[0] += dx;
                    acc[1] += dy;
                    acc[2] += dx.abs();
                    acc[3] += dy.abs();
                }
            }
            let base = (cy * 4 + cx) as usize * 4;
            v[base..base + 4].copy_from_slice(&acc);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = [0f32; DESCRIPTOR_LEN];
    if norm > 1e-12 {
        for (o, x) in out.iter_mut().zip(&v) {
            *o = (x / norm) as f32;
        }
    } else {
        // featureless patch: any fixed unit vector keeps the norm invariant
        out.fill((1.0 / (DESCRIPTOR_LEN as f64).sqrt()) as f32);
    }
    Descriptor(out)
}

#[cfg(test)]
mod tests {
    use super::super::{detect, DetectorConfig};
    use super::*;
    use crate::frame::Region;

    fn texture(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let v = 128.0 + 50.0 * (x * 0.21).sin() * (y * 0.17).cos() + 40.0 * ((x + 2.0 * y) * 0.05).sin();
            let v = v as u8;
            [v, v, v]
        })
    }

    #[test]
    fn descriptors_are_unit_norm_and_copy_stable() {
        let f = texture(120, 100);
        let kps = detect(&f, &Region::full(120, 100), &DetectorConfig::default()).unwrap();
        assert!(!kps.is_empty());
        let a = describe(&f, &kps);
        let b = describe(&f.clone(), &kps);
        assert_eq!(a, b);
        for d in &a {
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.0.iter().all(|v| v.is_finite()));
        }
        let flat = describe(&Frame::filled(40, 40, [9, 9, 9]), &kps[..1]);
        assert!((flat[0].norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn translated_frame_gives_close_descriptors() {
        let big = texture(200, 160);
        let a = big.crop(&Region::new(0, 0, 170, 140).unwrap()).unwrap();
        let b = big.crop(&Region::new(12, 9, 182, 149).unwrap()).unwrap();
        let kps = detect(&a, &Region::full(170, 140), &DetectorConfig::default()).unwrap();
        let inner: Vec<Keypoint> = kps
            .into_iter()
            .filter(|k| k.x > 40.0 && k.y > 40.0 && k.x < 120.0 && k.y < 100.0)
            .collect();
        assert!(!inner.is_empty());
        let moved: Vec<Keypoint> = inner
            .iter()
            .map(|k| Keypoint {
                x: k.x - 12.0,
                y: k.y - 9.0,
                ..*k
            })
            .collect();
        let da = describe(&a, &inner);
        let db = describe(&b, &moved);
        for (p, q) in da.iter().zip(&db) {
            assert!(p.distance(q) < 0.3);
        }
    }
}
