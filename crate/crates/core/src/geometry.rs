//! Camera-derived planar homographies, canvas layout, warping, overlap
//! extraction and the scale/translation refinement `H' = T * H * S`.
//!
//! Conventions: a view's homography maps world-plane coordinates `(X, Y, 1)`
//! (plane `Z = 0`) to its image. `pairwise_homography(a, b) = a * b^-1` maps
//! image-b pixels into image a. Canvas pixels are reference-image pixels
//! shifted by the canvas offset.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StitchError};
use crate::features::SimilarityParams;
use crate::frame::{sample_bilinear, to_level, Frame, Region};

const SINGULAR_DET: f64 = 1e-12;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Scale both focal lengths by `f`.
    pub fn scaled_focal(&self, f: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * f,
            fy: self.fy * f,
            ..*self
        }
    }
}

/// World-to-camera rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl CameraExtrinsics {
    pub fn new(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        CameraExtrinsics { r, t }
    }

    pub fn identity() -> Self {
        CameraExtrinsics {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0, 0.0, 1.0],
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, k| self.r[i][k])
    }

    /// `|R R^T - I|` (max entry) and `det R`.
    pub fn orthonormality(&self) -> (f64, f64) {
        let r = self.rotation();
        let e = (r * r.transpose() - Matrix3::identity()).abs().max();
        (e, r.determinant())
    }

    pub fn is_rotation(&self) -> bool {
        let (e, d) = self.orthonormality();
        e < 1e-6 && (d - 1.0).abs() < 1e-6
    }
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)` with angles in degrees.
pub fn rotation_from_ypr(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (y, p, r) = (yaw.to_radians(), pitch.to_radians(), roll.to_radians());
    let rz = Matrix3::new(y.cos(), -y.sin(), 0.0, y.sin(), y.cos(), 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(p.cos(), 0.0, p.sin(), 0.0, 1.0, 0.0, -p.sin(), 0.0, p.cos());
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, r.cos(), -r.sin(), 0.0, r.sin(), r.cos());
    let m = rz * ry * rx;
    std::array::from_fn(|i| std::array::from_fn(|k| m[(i, k)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Camera,
    Refined,
    Identity,
    External,
}

/// Projective 3x3 transform, normalised so `h[2][2] = 1` whenever that entry
/// is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
    pub provenance: Provenance,
}

impl Homography {
    pub fn identity() -> Self {
        Homography::from_matrix(Matrix3::identity(), Provenance::Identity)
    }

    pub fn from_matrix(m: Matrix3<f64>, provenance: Provenance) -> Self {
        let s = m[(2, 2)];
        let m = if s != 0.0 && s.is_finite() { m / s } else { m };
        Homography {
            h: std::array::from_fn(|i| std::array::from_fn(|k| m[(i, k)])),
            provenance,
        }
    }

    pub fn from_rows(h: [[f64; 3]; 3], provenance: Provenance) -> Self {
        Homography::from_matrix(Matrix3::from_fn(|i, k| h[i][k]), provenance)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography::from_rows([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]], Provenance::External)
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Homography::from_rows([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]], Provenance::External)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, k| self.h[i][k])
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// Map a point; `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let h = &self.h;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let d = self.det();
        if !d.is_finite() || d.abs() < SINGULAR_DET {
            return Err(StitchError::SingularHomography(d.abs()));
        }
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or(StitchError::SingularHomography(d.abs()))?;
        Ok(Homography::from_matrix(inv, self.provenance))
    }

    /// `self * other`: apply `other` first.
    pub fn then_after(&self, other: &Homography, provenance: Provenance) -> Homography {
        Homography::from_matrix(self.matrix() * other.matrix(), provenance)
    }

    /// The eight free entries, row-major, for reports.
    pub fn eight(&self) -> [f64; 8] {
        let h = &self.h;
        [h[0][0], h[0][1], h[0][2], h[1][0], h[1][1], h[1][2], h[2][0], h[2][1]]
    }

    /// Largest absolute entry difference after normalisation.
    pub fn max_diff(&self, other: &Homography) -> f64 {
        (self.matrix() - other.matrix()).abs().max()
    }
}

/// `H = K [r1 r2 t]`: the image of the world plane `Z = 0`.
pub fn planar_homography(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Result<Homography> {
    let r = extr.rotation();
    let t = Vector3::from(extr.t);
    let mut p = Matrix3::zeros();
    p.set_column(0, &r.column(0));
    p.set_column(1, &r.column(1));
    p.set_column(2, &t);
    let d = p.determinant();
    // det [r1 r2 t] = r3 . t: the camera centre's distance from the plane
    if !d.is_finite() || d.abs() < SINGULAR_DET * t.norm().max(1.0) {
        return Err(StitchError::DegeneratePose(d.abs()));
    }
    let h = Homography::from_matrix(intr.k() * p, Provenance::Camera);
    if h.det().abs() < SINGULAR_DET {
        return Err(StitchError::DegeneratePose(h.det().abs()));
    }
    Ok(h)
}

/// `H_a * H_b^-1`, mapping image-b pixels into image a.
pub fn pairwise_homography(h_a: &Homography, h_b: &Homography) -> Result<Homography> {
    if h_a.det().abs() < SINGULAR_DET {
        return Err(StitchError::SingularHomography(h_a.det().abs()));
    }
    let inv_b = h_b.inverse()?;
    let provenance = if h_a.provenance == Provenance::Camera && h_b.provenance == Provenance::Camera {
        Provenance::Camera
    } else {
        Provenance::External
    };
    Ok(h_a.then_after(&inv_b, provenance))
}

/// Panorama canvas: `canvas = reference + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub offset_x: i64,
    pub offset_y: i64,
}

impl Canvas {
    pub fn for_frame(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            offset_x: 0,
            offset_y: 0,
        }
    }

    pub fn bounds(&self) -> Region {
        Region::full(self.width, self.height)
    }
}

const MAX_CANVAS_PIXELS: f64 = 64.0e6;

/// Bounding box of every frame's corners mapped into reference coordinates.
pub fn compute_canvas(to_reference: &[Homography], sizes: &[(usize, usize)]) -> Result<Canvas> {
    if to_reference.len() != sizes.len() || sizes.is_empty() {
        return Err(StitchError::ShapeMismatch("one frame size per homography".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (h, &(w, ht)) in to_reference.iter().zip(sizes) {
        let (w, ht) = (w as f64 - 1.0, ht as f64 - 1.0);
        for (cx, cy) in [(0.0, 0.0), (w, 0.0), (0.0, ht), (w, ht)] {
            let (px, py) = h.apply(cx, cy).ok_or(StitchError::EmptyProjection)?;
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
    }
    let (fx0, fy0) = (x0.floor(), y0.floor());
    let width = (x1.ceil() - fx0 + 1.0).max(1.0);
    let height = (y1.ceil() - fy0 + 1.0).max(1.0);
    if !(width * height).is_finite() || width * height > MAX_CANVAS_PIXELS {
        return Err(StitchError::config(
            "views",
            format!("panorama canvas {width}x{height} is implausibly large"),
        ));
    }
    Ok(Canvas {
        width: width as usize,
        height: height as usize,
        offset_x: -fx0 as i64,
        offset_y: -fy0 as i64,
    })
}

/// Inverse-map every canvas pixel through `to_reference^-1` and sample
/// bilinearly. The mask marks pixels whose preimage was valid.
pub fn warp_frame(frame: &Frame, to_reference: &Homography, canvas: &Canvas) -> Result<Frame> {
    let inv = to_reference.inverse()?;
    let (w, h) = (canvas.width, canvas.height);
    let (ox, oy) = (canvas.offset_x as f64, canvas.offset_y as f64);
    let mut data = vec![0u8; w * h * 3];
    let mut mask = vec![false; w * h];
    data.par_chunks_mut(w * 3)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, mrow))| {
            for x in 0..w {
                let Some((sx, sy)) = inv.apply(x as f64 - ox, y as f64 - oy) else {
                    continue;
                };
                let s = sample_bilinear(frame, sx, sy);
                if s.valid {
                    for c in 0..3 {
                        row[x * 3 + c] = to_level(s.rgb[c]);
                    }
                    mrow[x] = true;
                }
            }
        });
    if !mask.iter().any(|&m| m) {
        return Err(StitchError::EmptyProjection);
    }
    Frame::from_raw(w, h, data)?.with_mask(mask)
}

/// Intersection of two canvas masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    /// Tight bounding box in canvas coordinates.
    pub region: Region,
    /// Intersection mask over `region`, row-major.
    pub mask: Vec<bool>,
}

impl Overlap {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.region.contains(x, y) && self.mask[(y - self.region.y0) * self.region.width() + (x - self.region.x0)]
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn overlap_regions(mask_i: &[bool], mask_j: &[bool], width: usize, height: usize) -> Result<Overlap> {
    if mask_i.len() != width * height || mask_j.len() != width * height {
        return Err(StitchError::ShapeMismatch("masks must cover the canvas".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if mask_i[i] && mask_j[i] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(StitchError::NoOverlap);
    }
    let region = Region { x0, y0, x1, y1 };
    let mut mask = Vec::with_capacity(region.area());
    for y in y0..y1 {
        for x in x0..x1 {
            mask.push(mask_i[y * width + x] && mask_j[y * width + x]);
        }
    }
    Ok(Overlap { region, mask })
}

/// Grow `region` by `margin_fraction` of its size on every side, clamped to
/// `bounds`.
pub fn broaden(region: &Region, margin_fraction: f64, bounds: &Region) -> Region {
    let mx = (region.width() as f64 * margin_fraction.max(0.0)).round() as usize;
    let my = (region.height() as f64 * margin_fraction.max(0.0)).round() as usize;
    Region {
        x0: region.x0.saturating_sub(mx).max(bounds.x0),
        y0: region.y0.saturating_sub(my).max(bounds.y0),
        x1: (region.x1 + mx).min(bounds.x1),
        y1: (region.y1 + my).min(bounds.y1),
    }
}

/// `translation(tx, ty) * h * scale(sx, sy)`.
pub fn refine_homography(h: &Homography, p: &SimilarityParams) -> Result<Homography> {
    let t = Homography::translation(p.tx, p.ty);
    let s = Homography::scale(p.sx, p.sy);
    let out = t.then_after(&h.then_after(&s, Provenance::Refined), Provenance::Refined);
    let d = out.det();
    if !d.is_finite() || d.abs() < SINGULAR_DET {
        return Err(StitchError::SingularHomography(d.abs()));
    }
    Ok(out)
}

/// Least-squares `(sx, sy, tx, ty)` such that `refine_homography(h, p)`
/// maps each `src` point onto its `dst` partner.
///
/// Levenberg-Marquardt with an analytic Jacobian, started from the identity
/// correction.
pub fn fit_refinement(h: &Homography, src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<SimilarityParams> {
    if src.len() != dst.len() {
        return Err(StitchError::ShapeMismatch("unpaired refinement points".into()));
    }
    if src.len() < 2 {
        return Err(StitchError::InsufficientMatches(src.len()));
    }
    let m = h.h;
    let residuals = |p: &[f64; 4]| -> (f64, Matrix4<f64>, Vector4<f64>) {
        let [sx, sy, tx, ty] = *p;
        let mut cost = 0.0;
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&(x, y), &(u, v)) in src.iter().zip(dst) {
            let (a, b) = (sx * x, sy * y);
            let nx = m[0][0] * a + m[0][1] * b + m[0][2];
            let ny = m[1][0] * a + m[1][1] * b + m[1][2];
            let w = m[2][0] * a + m[2][1] * b + m[2][2];
            if w.abs() < 1e-12 {
                continue;
            }
            let (px, py) = (nx / w, ny / w);
            let (rx, ry) = (px + tx - u, py + ty - v);
            cost += rx * rx + ry * ry;
            // d(px)/d(sx) = x (m00 - px m20) / w, and so on
            let jx = Vector4::new(
                x * (m[0][0] - px * m[2][0]) / w,
                y * (m[0][1] - px * m[2][1]) / w,
                1.0,
                0.0,
            );
            let jy = Vector4::new(
                x * (m[1][0] - py * m[2][0]) / w,
                y * (m[1][1] - py * m[2][1]) / w,
                0.0,
                1.0,
            );
            jtj += jx * jx.transpose() + jy * jy.transpose();
            jtr += jx * rx + jy * ry;
        }
        (cost, jtj, jtr)
    };
    let mut p = [1.0, 1.0, 0.0, 0.0];
    let (mut cost, mut jtj, mut jtr) = residuals(&p);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut a = jtj;
        for i in 0..4 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = a.lu().solve(&(-jtr)) else {
            break;
        };
        let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
        let (c2, j2, r2) = residuals(&cand);
        if c2.is_finite() && c2 < cost {
            let converged = (cost - c2) <= 1e-15 * cost.max(1e-300) || step.norm() < 1e-12;
            p = cand;
            cost = c2;
            jtj = j2;
            jtr = r2;
            lambda = (lambda * 0.3).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(StitchError::SingularHomography(0.0));
    }
    Ok(SimilarityParams {
        sx: p[0],
        sy: p[1],
        tx: p[2],
        ty: p[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn project(intr: &CameraIntrinsics, extr: &CameraExtrinsics, x: f64, y: f64) -> (f64, f64) {
        let r = extr.rotation();
        let pc = r * Vector3::new(x, y, 0.0) + Vector3::from(extr.t);
        let pi = intr.k() * pc;
        (pi.x / pi.z, pi.y / pi.z)
    }

    fn textured(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let v = ((x as f64 * 0.3).sin() * 60.0 + (y as f64 * 0.21).cos() * 50.0 + 128.0) as u8;
            [v, v.wrapping_add(40), 255 - v]
        })
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> (CameraIntrinsics, CameraExtrinsics) {
        let intr = CameraIntrinsics {
            fx: rng.random_range(300.0..900.0),
            fy: rng.random_range(300.0..900.0),
            cx: rng.random_range(100.0..400.0),
            cy: rng.random_range(100.0..300.0),
        };
        let r = rotation_from_ypr(
            rng.random_range(-30.0..30.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-10.0..10.0),
        );
        let t = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(3.0..8.0),
        ];
        (intr, CameraExtrinsics::new(r, t))
    }

    #[test]
    fn frontal_unit_camera_is_identity() {
        let k = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        let h = planar_homography(&k, &CameraExtrinsics::identity()).unwrap();
        assert!(h.max_diff(&Homography::identity()) < 1e-15);
        assert_eq!(h.provenance, Provenance::Camera);
    }

    #[test]
    fn x_translation_only_touches_the_offset_column() {
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 480.0,
            cx: 320.0,
            cy: 240.0,
        };
        let base = planar_homography(&k, &CameraExtrinsics::identity()).unwrap();
        let mut e = CameraExtrinsics::identity();
        e.t[0] = 0.25;
        let moved = planar_homography(&k, &e).unwrap();
        for i in 0..3 {
            for c in 0..3 {
                if (i, c) != (0, 2) {
                    assert!((base.h[i][c] - moved.h[i][c]).abs() < 1e-12);
                }
            }
        }
        assert!((moved.h[0][2] - base.h[0][2] - 500.0 * 0.25).abs() < 1e-9);
    }

    #[test]
    fn yawed_camera_maps_plane_points_to_their_projections() {
        let k = CameraIntrinsics {
            fx: 700.0,
            fy: 700.0,
            cx: 320.0,
            cy: 240.0,
        };
        let e = CameraExtrinsics::new(rotation_from_ypr(0.0, 10.0, 0.0), [0.1, -0.2, 5.0]);
        let h = planar_homography(&k, &e).unwrap();
        for (x, y) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-1.5, 0.7)] {
            let (u, v) = h.apply(x, y).unwrap();
            let (pu, pv) = project(&k, &e, x, y);
            assert!((u - pu).abs() < 1e-9 && (v - pv).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_in_the_plane_is_degenerate() {
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 0.0,
            cy: 0.0,
        };
        let e = CameraExtrinsics::new(rotation_from_ypr(0.0, 0.0, 0.0), [1.0, 1.0, 0.0]);
        assert!(matches!(planar_homography(&k, &e), Err(StitchError::DegeneratePose(_))));
    }

    #[test]
    fn ypr_is_a_rotation() {
        let e = CameraExtrinsics::new(rotation_from_ypr(33.0, -12.0, 7.0), [0.0; 3]);
        assert!(e.is_rotation());
        let r = rotation_from_ypr(90.0, 0.0, 0.0);
        assert!((r[0][1] + 1.0).abs() < 1e-12 && (r[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (k, e) = random_pose(&mut rng);
        let h = planar_homography(&k, &e).unwrap();
        assert!(pairwise_homography(&h, &h).unwrap().max_diff(&Homography::identity()) < 1e-9);
        let shifted = Homography::translation(100.0, 0.0).then_after(&h, Provenance::Camera);
        let p = pairwise_homography(&shifted, &h).unwrap();
        assert!(p.max_diff(&Homography::translation(100.0, 0.0)) < 1e-9);

        let (k2, e2) = random_pose(&mut rng);
        let h2 = planar_homography(&k2, &e2).unwrap();
        let p = pairwise_homography(&h, &h2).unwrap();
        let oracle = h.matrix() * h2.matrix().try_inverse().unwrap();
        let oracle = oracle / oracle[(2, 2)];
        assert!((p.matrix() - oracle).abs().max() < 1e-9);
        // image-b points land where the plane point projects in image a
        let (u, v) = h2.apply(0.3, -0.4).unwrap();
        let (a, b) = p.apply(u, v).unwrap();
        let (ea, eb) = h.apply(0.3, -0.4).unwrap();
        assert!((a - ea).abs() < 1e-6 && (b - eb).abs() < 1e-6);

        let singular = Homography::from_rows(
            [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]],
            Provenance::External,
        );
        assert!(matches!(
            pairwise_homography(&h, &singular),
            Err(StitchError::SingularHomography(_))
        ));
    }

    #[test]
    fn identity_warp_is_identity() {
        let f = textured(30, 20);
        let w = warp_frame(&f, &Homography::identity(), &Canvas::for_frame(30, 20)).unwrap();
        assert_eq!(w.data(), f.data());
        assert!(w.mask().unwrap().iter().all(|&m| m));
    }

    #[test]
    fn translation_leaves_invalid_strip() {
        let f = textured(30, 20);
        let w = warp_frame(&f, &Homography::translation(5.0, 0.0), &Canvas::for_frame(30, 20)).unwrap();
        for y in 0..20 {
            for x in 0..30 {
                assert_eq!(w.is_valid(x, y), x >= 5);
                if x >= 5 {
                    assert_eq!(w.pixel(x, y), f.pixel(x - 5, y));
                }
            }
        }
    }

    #[test]
    fn doubling_matches_independent_upsample() {
        let f = textured(20, 16);
        let w = warp_frame(&f, &Homography::scale(2.0, 2.0), &Canvas::for_frame(39, 31)).unwrap();
        for y in 0..31 {
            for x in 0..39 {
                let (sx, sy) = (x as f64 / 2.0, y as f64 / 2.0);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(19), (y0 + 1).min(15));
                let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
                for c in 0..3 {
                    let g = |x: usize, y: usize| f.pixel(x, y)[c] as f64;
                    let v = (g(x0, y0) * (1.0 - ax) + g(x1, y0) * ax) * (1.0 - ay)
                        + (g(x0, y1) * (1.0 - ax) + g(x1, y1) * ax) * ay;
                    assert!((w.pixel(x, y)[c] as f64 - v).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn warp_outside_is_empty_projection() {
        let f = textured(10, 10);
        assert!(matches!(
            warp_frame(&f, &Homography::translation(500.0, 0.0), &Canvas::for_frame(10, 10)),
            Err(StitchError::EmptyProjection)
        ));
    }

    #[test]
    fn warp_round_trip_recovers_interior() {
        let f = Frame::from_fn(60, 40, |x, y| {
            let v = ((x as f64 * 0.15).sin() * 60.0 + (y as f64 * 0.11).cos() * 50.0 + 128.0) as u8;
            [v, 255 - v, v / 2]
        });
        let h = Homography::from_rows(
            [[1.05, 0.04, 3.0], [-0.02, 0.97, 2.0], [1e-4, -5e-5, 1.0]],
            Provenance::External,
        );
        let canvas = compute_canvas(&[h], &[(60, 40)]).unwrap();
        let fwd = warp_frame(&f, &h, &canvas).unwrap();
        let back_h = Homography::translation(canvas.offset_x as f64, canvas.offset_y as f64)
            .then_after(&h, Provenance::External)
            .inverse()
            .unwrap();
        let back = warp_frame(&fwd, &back_h, &Canvas::for_frame(60, 40)).unwrap();
        let mut err = 0.0;
        let mut n = 0.0;
        for y in 5..35 {
            for x in 5..55 {
                for c in 0..3 {
                    err += (back.pixel(x, y)[c] as f64 - f.pixel(x, y)[c] as f64).abs();
                    n += 1.0;
                }
            }
        }
        assert!(err / n <= 2.0, "mae {}", err / n);
    }

    #[test]
    fn canvas_covers_shifted_frame() {
        let c = compute_canvas(
            &[Homography::identity(), Homography::translation(-50.0, 10.0)],
            &[(100, 80), (100, 80)],
        )
        .unwrap();
        assert_eq!((c.offset_x, c.offset_y), (50, 0));
        assert_eq!((c.width, c.height), (150, 90));
    }

    #[test]
    fn overlap_cases() {
        let (w, h) = (10, 6);
        let all = vec![true; w * h];
        let o = overlap_regions(&all, &all, w, h).unwrap();
        assert_eq!(o.region, Region::full(w, h));
        let left: Vec<bool> = (0..w * h).map(|i| i % w < 4).collect();
        let right: Vec<bool> = (0..w * h).map(|i| i % w >= 4).collect();
        assert!(matches!(
            overlap_regions(&left, &right, w, h),
            Err(StitchError::NoOverlap)
        ));
        // 30% band: left covers x < 7, right covers x >= 4
        let left: Vec<bool> = (0..w * h).map(|i| i % w < 7).collect();
        let o = overlap_regions(&left, &right, w, h).unwrap();
        assert_eq!(o.region, Region::new(4, 0, 7, h).unwrap());
        assert_eq!(o.pixel_count(), 3 * h);
    }

    #[test]
    fn broaden_cases() {
        let bounds = Region::full(200, 100);
        let r = Region::new(50, 30, 150, 70).unwrap();
        assert_eq!(broaden(&r, 0.0, &bounds), r);
        assert_eq!(broaden(&r, 0.15, &bounds), Region::new(35, 24, 165, 76).unwrap());
        assert_eq!(broaden(&r, 1.0, &bounds), bounds);
    }

    #[test]
    fn refinement_identities() {
        let h = Homography::from_rows(
            [[1.1, 0.1, 5.0], [0.0, 0.9, -3.0], [1e-4, 0.0, 1.0]],
            Provenance::Camera,
        );
        let unit = SimilarityParams::identity();
        let r = refine_homography(&h, &unit).unwrap();
        assert_eq!(r.h, h.h);
        assert_eq!(r.provenance, Provenance::Refined);
        let p = SimilarityParams {
            sx: 1.0,
            sy: 1.0,
            tx: 4.0,
            ty: -2.0,
        };
        let t = refine_homography(&Homography::identity(), &p).unwrap();
        assert!(t.max_diff(&Homography::translation(4.0, -2.0)) < 1e-15);
    }

    #[test]
    fn refinement_fit_recovers_known_correction() {
        let h = Homography::from_rows(
            [[0.95, 0.05, 12.0], [0.02, 1.02, -4.0], [2e-4, 1e-4, 1.0]],
            Provenance::Camera,
        );
        let truth = SimilarityParams {
            sx: 1.03,
            sy: 0.98,
            tx: -6.0,
            ty: 2.5,
        };
        let target = refine_homography(&h, &truth).unwrap();
        let src: Vec<(f64, f64)> = (0..40)
            .map(|i| ((i % 8) as f64 * 40.0, (i / 8) as f64 * 50.0))
            .collect();
        let dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| target.apply(x, y).unwrap()).collect();
        let p = fit_refinement(&h, &src, &dst).unwrap();
        assert!((p.sx - truth.sx).abs() < 1e-9 && (p.sy - truth.sy).abs() < 1e-9);
        assert!((p.tx - truth.tx).abs() < 1e-6 && (p.ty - truth.ty).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn planar_homography_reproduces_projection(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (k, e) = random_pose(&mut rng);
            let h = planar_homography(&k, &e).unwrap();
            for _ in 0..5 {
                let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let (u, v) = h.apply(x, y).unwrap();
                let (pu, pv) = project(&k, &e, x, y);
                let scale = pu.abs().max(pv.abs()).max(1.0);
                prop_assert!((u - pu).abs() / scale < 1e-9);
                prop_assert!((v - pv).abs() / scale < 1e-9);
            }
        }
    }
}
