//! Dense tensor arithmetic and the deterministic random source.
//!
//! Everything here is a pure function over `f32` tensors. Transcendentals go
//! through `libm` so that encoder and decoder agree bit-for-bit on every
//! platform; the entropy tables downstream depend on it.

mod rng;
mod tensor;

pub use rng::Rng;
pub use tensor::{
    add, concat_channels, conv2d, hadamard, leaky_relu, matmul, mean_abs_diff, scale, sigmoid,
    softmax_rows, tanh, transpose, upsample_nearest, Conv, Tensor,
};
