//! Raw slice kernels behind the differentiable ops.

pub mod conv;
pub mod norm;
pub mod spatial;
