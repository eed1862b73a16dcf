use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MatchPair, SimilarityParams};
use crate::error::{Result, StitchError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_px: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 500,
            inlier_px: 2.0,
            min_scale: 0.5,
            max_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub params: SimilarityParams,
    /// Inlier matches in canonical order.
    pub inliers: Vec<MatchPair>,
    pub total: usize,
}

fn in_band(s: f64, cfg: &RansacConfig) -> bool {
    s.is_finite() && s >= cfg.min_scale && s <= cfg.max_scale
}

fn residual(p: &SimilarityParams, m: &MatchPair) -> f64 {
    let (x, y) = p.apply(m.a);
    (x - m.b.0).hypot(y - m.b.1)
}

/// Per-axis least squares `b = s a + t`.
fn fit_axis(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<(f64, f64)> {
    let n = pairs.clone().count() as f64;
    if n < 2.0 {
        return None;
    }
    let (sa, sb) = pairs.clone().fold((0.0, 0.0), |(x, y), (a, b)| (x + a, y + b));
    let (ma, mb) = (sa / n, sb / n);
    let (mut saa, mut sab) = (0.0, 0.0);
    for (a, b) in pairs {
        saa += (a - ma) * (a - ma);
        sab += (a - ma) * (b - mb);
    }
    if saa <= 1e-12 {
        return None;
    }
    let s = sab / saa;
    Some((s, mb - s * ma))
}

fn refit(inliers: &[&MatchPair]) -> Option<SimilarityParams> {
    let (sx, tx) = fit_axis(inliers.iter().map(|m| (m.a.0, m.b.0)))?;
    let (sy, ty) = fit_axis(inliers.iter().map(|m| (m.a.1, m.b.1)))?;
    Some(SimilarityParams { sx, sy, tx, ty })
}

/// Consensus fit of `b = (sx a.x + tx, sy a.y + ty)`.
///
/// Matches are sorted canonically first, so the result depends only on the
/// set of matches and `seed`. Two correspondences fix the four parameters;
/// the best sample is refit by least squares on its inliers.
pub fn ransac_scale_translation(matches: &[MatchPair], cfg: &RansacConfig, seed: u64) -> Result<RansacFit> {
    let n = matches.len();
    if n < 2 {
        return Err(StitchError::InsufficientMatches(n));
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|p, q| {
        p.a.0
            .total_cmp(&q.a.0)
            .then(p.a.1.total_cmp(&q.a.1))
            .then(p.b.0.total_cmp(&q.b.0))
            .then(p.b.1.total_cmp(&q.b.1))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, SimilarityParams)> = None;
    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (p, q) = (&sorted[i], &sorted[j]);
        let (dax, day) = (q.a.0 - p.a.0, q.a.1 - p.a.1);
        if dax.abs() < 1e-9 || day.abs() < 1e-9 {
            continue;
        }
        let sx = (q.b.0 - p.b.0) / dax;
        let sy = (q.b.1 - p.b.1) / day;
        if !in_band(sx, cfg) || !in_band(sy, cfg) {
            continue;
        }
        let model = SimilarityParams {
            sx,
            sy,
            tx: p.b.0 - sx * p.a.0,
            ty: p.b.1 - sy * p.a.1,
        };
        let count = sorted.iter().filter(|m| residual(&model, m) <= cfg.inlier_px).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, model));
        }
    }
    let Some((_, model)) = best else {
        return Err(StitchError::NoConsensus { inliers: 0, total: n });
    };

    // refit, then re-collect inliers under the refined model once
    let mut params = model;
    let mut inliers: Vec<&MatchPair> = sorted
        .iter()
        .filter(|m| residual(&params, m) <= cfg.inlier_px)
        .collect();
    for _ in 0..2 {
        let Some(p) = refit(&inliers) else { break };
        let next: Vec<&MatchPair> = sorted.iter().filter(|m| residual(&p, m) <= cfg.inlier_px).collect();
        if next.len() < inliers.len() {
            break;
        }
        params = p;
        inliers = next;
    }
    if let Some(p) = refit(&inliers) {
        params = p;
    }
    let count = inliers.len();
    let weak = 2 * count < n && count < 8;
    if weak || !in_band(params.sx, cfg) || !in_band(params.sy, cfg) {
        return Err(StitchError::NoConsensus {
            inliers: count,
            total: n,
        });
    }
    Ok(RansacFit {
        params,
        inliers: inliers.into_iter().copied().collect(),
        total: n,
    })
}
