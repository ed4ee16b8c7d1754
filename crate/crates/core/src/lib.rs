//! Learned and classical optimizers for 3D Gaussian splatting.
//!
//! The crate bundles everything needed to study per-scene Gaussian
//! optimization at desk scale:
//!
//! - [`scene`]: Gaussian clouds, posed views, synthetic scene generation and
//!   the on-disk scene container.
//! - [`render`]: a tiled CPU splatting renderer with an exact analytic
//!   backward pass over all 59 parameters of every Gaussian.
//! - [`loss`]: image losses (L1, D-SSIM) and the meta-training losses.
//! - [`autodiff`]: a small reverse-mode tape over dense 2-D arrays.
//! - [`knn`]: exact k-nearest-neighbour tables over Gaussian means.
//! - [`optim`]: SGD and Adam with per-group learning rates, gradient
//!   normalisations and schedules.
//! - [`model`]: the learned optimizer network (point-transformer state
//!   branch, state-scale MLP, direction/magnitude update head).
//! - [`meta`]: meta-training with a checkpoint buffer and frozen rollouts.
//! - [`harness`]: per-scene optimization runs, comparisons and CSV/plot
//!   artifacts used by the `splatopt` binary.
//!
//! Every numeric routine is generic over [`Real`] so the same code runs in
//! `f32` for speed and in `f64` for gradient checks.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod image;
pub mod knn;
pub mod loss;
pub mod meta;
pub mod model;
pub mod optim;
pub mod real;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
pub use real::Real;
