//! Multi-view video stitching engine.
//!
//! Views are pre-warped onto the reference view with camera-derived
//! homographies (refined once from feature matches), color-corrected against
//! the reference over a short temporal window, locally aligned with dense
//! optical flow, fused with positional weights and finally tone-balanced
//! with temporally smoothed thresholds.
//!
//! The crate root re-exports the types shared by the CLI and benchmarks.

pub mod blend;
pub mod color_balance;
pub mod color_transfer;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod frame;
pub mod geometry;
pub mod histogram;
pub mod integral;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use blend::{compose_panorama, flow_fuse, BlendWeights, FuseMode, FusedOverlap};
pub use color_balance::{BalanceConfig, BalanceThresholds, ThresholdHistory, ToneLut};
pub use color_transfer::{
    solve_color_matrix, transfer_step, ColorMatrix, SpecificationLut, TransferMode, TransferWindow,
};
pub use config::{load_config, parse_config, CameraConfig, RefineConfig, StitchConfig, ViewConfig};
pub use error::{Result, StitchError};
pub use eval::{compare_methods, psnr, ssim, timing_table, ColorSequence, MetricRow, Psnr, StageTimes, TimingRow};
pub use flow::{dense_flow, FlowConfig, FlowField};
pub use frame::{Frame, Region};
pub use geometry::{CameraExtrinsics, CameraIntrinsics, Canvas, Homography, Provenance};
pub use histogram::Histogram256;
pub use pipeline::{
    run_sequence, run_sequence_observed, run_sequence_with, FeatureDump, FrameReport, PipelineState, RunReport,
};
pub use synth::{synth_scene, Flicker, SynthScene, SynthSpec};
