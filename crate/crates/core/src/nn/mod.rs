//! Minimal CPU layers with explicit backward passes.
//!
//! Activations are `[channels, batch, height, width]` arrays so a convolution
//! over the whole batch is a single matrix product.

mod activation;
mod adam;
mod conv;
mod matmul;
mod norm;

pub use activation::{celu, celu_backward, sigmoid, sigmoid_backward};
pub use adam::Adam;
pub use conv::{col2im, conv_output_size, im2col, Conv2d, ConvTranspose2d, Taps};
pub use matmul::{matmul, matmul_into};
pub use norm::{GroupNorm, GroupNormCache};
