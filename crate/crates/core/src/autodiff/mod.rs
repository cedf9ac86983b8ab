//! Minimal dense reverse-mode differentiation in double precision.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node that
//! depends on a trainable leaf.
//!
//! ```
//! use pcrobust::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let half = g.scale(sq, 0.5).unwrap();
//! let loss = g.sum(half).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 3.0]);
//! ```
//!
//! Every operation checks its output for NaN or infinity and fails with
//! [`AutodiffError::NonFinite`] instead of propagating it.

mod gradcheck;
mod graph;
mod tensor;

use thiserror::Error;

pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
