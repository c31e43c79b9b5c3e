//! Desk-scale laboratory for point-supervised small-target segmentation.
//!
//! The crate bundles everything needed to study how a tiny segmentation
//! network trained on single-point labels first over-segments a target and
//! then collapses back onto the point, and how periodically merging the
//! network's own predictions into the supervision recovers full target
//! masks from those points:
//!
//! - [`tensor`] / [`graph`] / [`adam`]: a minimal dense-tensor kernel with
//!   reverse-mode autodiff and an Adam optimizer.
//! - [`unet`] / [`loss`] / [`train`]: the tiny U-Net-style network, focal
//!   loss with background-point masking, and the per-epoch training step.
//! - [`synth`]: synthetic infrared-like scenes with extended small targets,
//!   ground-truth masks and point labels.
//! - [`region`]: connected components, centroids and bordered crops.
//! - [`evolve`]: the label-evolution core (candidate extraction, adaptive
//!   thresholding, false-alarm elimination, blending, scheduling).
//! - [`metrics`]: IoU, pixel accuracy, Pd/Fa and the degeneration tracker.

pub mod adam;
pub mod error;
pub mod evolve;
pub mod graph;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod region;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use grid::{Grid, Mask};
pub use tensor::{Shape, Tensor};
