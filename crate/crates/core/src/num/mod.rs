//! Numeric backbone: tensors, reverse-mode differentiation, neural
//! primitives, and the optimizer.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use kernels::Neighborhoods;
pub use optim::{AdamWConfig, OptimizerState, ParamId, ParamSet, Parameter};
pub use scalar::{Precision, Scalar};
pub use tape::{DftTable, Gradients, Tape, Var};
pub use tensor::Tensor;
