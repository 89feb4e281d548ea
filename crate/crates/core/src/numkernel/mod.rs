//! Minimal dense-tensor engine: shaped arrays, kernels, seeded randomness,
//! reverse-mode gradients and their finite-difference oracle.

pub mod gradcheck;
pub mod graph;
pub mod op_suite;
pub mod ops;
pub mod param;
pub mod rng;
pub mod tensor;

pub use gradcheck::{check_all_params, finite_diff_check, CheckOptions, GradCheckEntry};
pub use graph::{backward_into, Gradients, Graph, Var};
pub use ops::{activation, kronecker, matmul, softmax, st_apply, Activation};
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tensor::{Precision, Tensor};
