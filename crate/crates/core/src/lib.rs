//! Joint left/right pedestrian association and 3D localization from stereo
//! 2D keypoints, with Laplace confidence intervals.

// `!(x > 0.0)` is used on purpose so NaN fails validation too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod jsonl;
pub mod keypoints;
pub mod model;
pub mod nn;
pub mod pairs;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
