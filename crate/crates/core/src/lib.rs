//! Annotation-free semantic labeling of 3D scenes.
//!
//! The crate is organized along the pipeline:
//!
//! - [`scene`]: point clouds, pinhole cameras and frustum visibility.
//! - [`teacher`]: multi-view teacher features and lifted 3D mask groups.
//! - [`distill`]: point, prototype and contrastive distillation losses with
//!   analytical gradients.
//! - [`superpoint`]: voxel-seeded over-segmentation and feature pooling.
//! - [`diffusion`]: superpoint affinity graph, iterative and closed-form
//!   diffusion, plus GFT and PCA baselines.
//! - [`cluster`]: channel selection, k-means, primitive fitting and
//!   pseudo-labels.
//! - [`vote`]: segmentation-cluster semantic voting and evaluation metrics.
//! - [`synth`], [`pipeline`], [`bev`]: synthetic scenes, the end-to-end
//!   driver and bird's-eye-view export.
//!
//! 2D foundation models are not run here: per-view feature maps and masks
//! are read from files (or produced by [`synth`]).

pub mod bench;
pub mod bev;
pub mod cluster;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod scene;
pub mod superpoint;
pub mod synth;
pub mod teacher;
pub mod vote;

pub use error::{Error, Result};

/// Dense row-major-by-convention feature matrix (rows are points, superpoints
/// or prototypes; columns are channels).
pub type Matrix = nalgebra::DMatrix<f64>;
