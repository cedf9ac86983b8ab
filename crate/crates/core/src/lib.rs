//! Robust point-cloud classification toolkit.
//!
//! Anchor points for local feature grouping are drawn with density-aware
//! sampling, and the attention maps of a small self-attention classifier are
//! pushed toward low entropy during training. The crate also provides the
//! corruption generators and the evaluation harness used to measure error
//! rates under corruption.

pub mod autodiff;
pub mod corruption;
pub mod geometry;
pub mod harness;
pub mod loss;
pub mod model;
pub mod sampling;
pub mod seed;

pub use geometry::{PointCloud, Point3};
