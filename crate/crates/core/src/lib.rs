//! Spatio-temporal gating-adjacency graph convolution for skeleton motion
//! prediction, built on a small self-contained tensor and autodiff kernel.

pub mod error;
pub mod numkernel;

pub use error::{Error, Result};
pub use numkernel::{Activation, Graph, ParamId, ParamStore, Precision, Rng, Tensor, Var};
pub mod decoder;
pub mod gagcn;
pub mod gating;
pub mod motiondata;
pub mod trainer;
pub mod checkpoint;
pub mod checks;
