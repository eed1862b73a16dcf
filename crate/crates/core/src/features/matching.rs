use rayon::prelude::*;

use super::{Descriptor, Keypoint, MatchPair};

pub const DEFAULT_RATIO: f32 = 0.8;

fn two_nearest(d: &Descriptor, set: &[Descriptor]) -> Option<(usize, f32, f32)> {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for (i, e) in set.iter().enumerate() {
        let dist = d.distance(e);
        if dist < best.1 {
            second = best.1;
            best = (i, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Ratio-tested, mutually nearest pairs `(index_a, index_b, distance)`,
/// ordered by `index_a`.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f32) -> Vec<(usize, usize, f32)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<Option<usize>> = b.par_iter().map(|d| two_nearest(d, a).map(|n| n.0)).collect();
    a.par_iter()
        .enumerate()
        .filter_map(|(ia, d)| {
            let (ib, d1, d2) = two_nearest(d, b)?;
            let passes = d2.is_infinite() || d1 < ratio * d2;
            (passes && back[ib] == Some(ia)).then_some((ia, ib, d1))
        })
        .collect()
}

pub fn match_features(
    kps_a: &[Keypoint],
    desc_a: &[Descriptor],
    kps_b: &[Keypoint],
    desc_b: &[Descriptor],
    ratio: f32,
) -> Vec<MatchPair> {
    match_descriptors(desc_a, desc_b, ratio)
        .into_iter()
        .map(|(ia, ib, distance)| MatchPair {
            index_a: ia,
            index_b: ib,
            distance,
            a: (kps_a[ia].x, kps_a[ia].y),
            b: (kps_b[ib].x, kps_b[ib].y),
        })
        .collect()
}
