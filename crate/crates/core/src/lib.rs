//! Near-duplicate frame filtering for frame-sequence datasets.
//!
//! Frames are compared with SSIM after a box-filter downscale; a sequence
//! keeps a frame only when it scores below a threshold against the current
//! key frame. The crate also covers calibrating that threshold from labeled
//! pairs, synthetic ground-truth corpora, and patient-aware data splits.

pub mod calibration;
pub mod cli;
pub mod filter;
pub mod imaging;
pub mod manifest;
pub mod synth;

pub use filter::{
    filter_dataset, filter_sequence, FilterConfig, FilterReport, SequenceFilterResult,
};
pub use imaging::{downscale, pair_score, ssim, ScaleFactor, SsimParams, SsimWindow};
pub use manifest::{load_frame, DatasetManifest, Frame, SequenceRecord};
