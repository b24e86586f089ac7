//! Desk-scale building blocks for hypergraph-augmented polyp detection.
//!
//! The crate is framework free: a small dense [`Tensor`] type carries every
//! feature map, and each module is a set of pure functions over it.
//!
//! - [`tensor`]: convolution, pooling, activations, group normalization.
//! - [`emca`]: multi-scale attention (EMA) followed by context anchor
//!   attention (CAA).
//! - [`hyperconv`]: threshold hypergraph construction over a gridized
//!   feature map and two-stage node/hyperedge message passing.
//! - [`losses`]: BCE, CIoU, distribution focal loss, analytic gradients and
//!   a central-difference checker.
//! - [`metrics`]: greedy matching, precision/recall/F1, AP and mAP.
//! - [`eigencam`]: principal-component activation heatmaps.

pub mod bbox;
pub mod eigencam;
pub mod emca;
mod error;
pub mod hyperconv;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::SeededRng;
pub use tensor::Tensor;
