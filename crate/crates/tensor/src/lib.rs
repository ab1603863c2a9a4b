//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! Tensors are dense NCHW arrays generic over [`Float`] (`f32` for training,
//! `f64` for gradient checks). Operations live in [`ops`]; each builds a
//! [`Var`] that remembers how to push gradients to its inputs. Heavy kernels
//! parallelize over batch items or planes through [`par`], which falls back
//! to sequential loops when the `parallel` feature is disabled.

pub mod autograd;
pub mod kernels;
pub mod ops;
pub mod par;
pub mod profile;
mod scalar;
mod tensor;

pub use autograd::{Gradients, Var};
pub use kernels::conv::ConvGeom;
pub use scalar::{gemm, Float, Trans};
pub use tensor::{Shape, Tensor};
