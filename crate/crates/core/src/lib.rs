//! Gradient-based voxel selection for 3D point-cloud detection.
//!
//! This crate implements the full training-with-selection loop at desk scale:
//! scenes are voxelized into sparse grids, a small differentiable detector is
//! trained on them, per-voxel gradient magnitudes are computed from frozen
//! early- and late-stage snapshots of that detector, and the "meaningful"
//! voxel subset is selected and used to fine-tune the detector. Detection
//! quality is measured with rotated-box IoU and 40-point interpolated average
//! precision.
//!
//! Module map:
//! - [`scene`]: point clouds, oriented ground-truth boxes, file formats, and
//!   the deterministic synthetic-scene generator.
//! - [`voxelizer`]: sparse voxel grids with capped per-cell point sampling.
//! - [`autodiff`]: a scalar reverse-mode differentiation engine.
//! - [`detector`]: a per-voxel point encoder + dense head, its losses,
//!   training, and inference.
//! - [`selector`]: gradient-magnitude voxel selection and the baseline
//!   samplers (dropout, background sampling, inverse-frequency sampling).
//! - [`metrics`]: rotated BEV/3D IoU, average precision, and NMS.
//! - [`trainer`]: the end-to-end pipeline, ablation sweeps, and reports.

pub mod autodiff;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod scene;
pub mod seed;
pub mod selector;
pub mod trainer;
pub mod voxelizer;

pub use error::{Error, Result};
