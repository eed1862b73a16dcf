//! Fixtures shared by the benchmarks.

use stitch_core::blend::blend_weights;
use stitch_core::geometry::{overlap_regions, warp_frame};
use stitch_core::{synth_scene, BlendWeights, Frame, Region, SynthScene, SynthSpec};

/// A synthetic two-view scene with the per-stage inputs precomputed.
pub struct Fixture {
    pub scene: SynthScene,
    /// Views warped with the true homographies.
    pub warped: Vec<Frame>,
    pub overlap: Region,
    /// Source and reference crops of the overlap.
    pub region_i: Frame,
    pub region_j: Frame,
    pub weights: BlendWeights,
}

impl Fixture {
    pub fn new(width: usize, height: usize, frames: usize) -> Fixture {
        let scene = synth_scene(&SynthSpec {
            seed: 1,
            width,
            height,
            frames,
            noise: 1.0,
            casts: vec![[0.9, 1.0, 1.08], [1.0; 3]],
            parallax_depth: 0.2,
            baseline: 0.03,
            ..SynthSpec::default()
        })
        .expect("valid synthetic spec");
        let canvas = scene.truth.canvas;
        let warped: Vec<Frame> = scene
            .frames
            .iter()
            .zip(&scene.truth.to_reference)
            .map(|(v, h)| warp_frame(&v[0], h, &canvas).expect("invertible homography"))
            .collect();
        let (mi, mj) = (warped[0].mask_or_full(), warped[1].mask_or_full());
        let overlap = overlap_regions(&mi, &mj, canvas.width, canvas.height).expect("views overlap");
        let weights = blend_weights(&mi, &mj, canvas.width, canvas.height, &overlap).expect("weights");
        let region_i = warped[0].crop(&overlap.region).expect("overlap inside canvas");
        let region_j = warped[1].crop(&overlap.region).expect("overlap inside canvas");
        Fixture {
            scene,
            warped,
            overlap: overlap.region,
            region_i,
            region_j,
            weights,
        }
    }

    /// Per-view streams.
    pub fn streams(&self) -> &[Vec<Frame>] {
        &self.scene.frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_crops_match_the_overlap() {
        let f = Fixture::new(160, 120, 2);
        assert_eq!(f.region_i.width(), f.overlap.width());
        assert_eq!(f.region_j.height(), f.overlap.height());
        assert_eq!(f.streams().len(), 2);
        assert_eq!(f.streams()[0].len(), 2);
    }
}
