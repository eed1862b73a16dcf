//! Upright SURF-style features and the scale+translation consensus fit used
//! to refine the pre-warp homographies.

mod describe;
mod detect;
mod matching;
mod ransac;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use describe::{describe, DESCRIPTOR_LEN};
pub use detect::{detect, DetectorConfig, MIN_REGION};
pub use matching::{match_descriptors, match_features, DEFAULT_RATIO};
pub use ransac::{ransac_scale_translation, RansacConfig, RansacFit};

/// A detected blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub response: f64,
}

/// 64 values, unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f32,
    pub a: (f64, f64),
    pub b: (f64, f64),
}

/// Axis-aligned scale and translation: `(x, y) -> (sx x + tx, sy y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityParams {
    pub fn identity() -> Self {
        SimilarityParams {
            sx: 1.0,
            sy: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (self.sx * p.0 + self.tx, self.sy * p.1 + self.ty)
    }
}

/// One `ax ay bx by distance` line per match.
pub fn matches_to_text(matches: &[MatchPair]) -> String {
    let mut out = String::new();
    for m in matches {
        let _ = writeln!(out, "{} {} {} {} {}", m.a.0, m.a.1, m.b.0, m.b.1, m.distance);
    }
    out
}

/// One `x y scale response` line per keypoint.
pub fn keypoints_to_text(kps: &[Keypoint]) -> String {
    let mut out = String::new();
    for k in kps {
        let _ = writeln!(out, "{} {} {} {}", k.x, k.y, k.scale, k.response);
    }
    out
}
