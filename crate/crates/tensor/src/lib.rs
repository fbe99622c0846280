//! Small dense tensor engine with a reverse-mode tape.
//!
//! Everything is two-dimensional: scalars are `[1, 1]`, vectors are `[1, n]`.
//! Values are row-major. The engine is generic over [`Real`] so the same
//! model code runs in `f32` for training and `f64` for gradient checks.

mod error;
mod graph;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Grads, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use real::Real;
pub use tensor::Tensor;
