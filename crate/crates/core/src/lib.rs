//! Joint multi-object detection and 6D pose estimation over video windows.
//!
//! A set-prediction transformer emits a fixed number of object slots per frame;
//! past object embeddings and per-object outputs are fused into the current frame
//! with cross-attention and a relative frame encoding.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod scenes;

pub use error::{Error, Result};
