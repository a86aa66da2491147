//! Matrix-free spectral analysis of second-moment matrices arising in deep
//! classifiers: stochastic Lanczos density estimation, class/cross-class
//! block decompositions, spectral knockouts, a closed-form Fisher spectrum for
//! a canonical Gaussian classification model, and a small MLP engine that
//! produces all of these quantities from first principles.

pub mod blocks;
pub mod ccm;
pub mod dense;
pub mod error;
mod format;
pub mod knockout;
pub mod lanczos;
pub mod linop;
pub mod mlp;
pub mod par;
pub mod rng;
pub mod svg;
pub mod synthetic;

pub use dense::Matrix;
pub use error::{Error, Result};
pub use linop::{
    deflate, materialize, shift_scale, subtract_op, AffineOperator, DeflatedOperator,
    DenseSymOperator, DifferenceOperator, LinearOperator,
};
