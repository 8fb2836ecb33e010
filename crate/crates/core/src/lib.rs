//! Multi-contrast segmentation of 3D volumes.
//!
//! The pipeline has three stages:
//!
//! 1. [`features`]: per-voxel neighborhood features (9 per channel) and their
//!    standardization.
//! 2. [`classifiers`]: supervised k-NN and Parzen-window posterior estimation.
//! 3. [`solver`]: total-variation regularized labeling over the unit simplex,
//!    solved with a first-order primal-dual method, optionally blended with a
//!    one-hot prior.
//!
//! [`eval`] scores hard labelings against references, [`phantom`] generates
//! synthetic multi-contrast volumes with known ground truth and
//! [`experiments`] wires everything into the end-to-end runs and sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod io;
pub mod phantom;
pub mod rng;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{GridShape, LabelField, LabelVolume, MultiChannelVolume};
