//! Numerical kernels over time-major 2-D tensors.
//!
//! Every forward kernel has a matching backward that accumulates parameter
//! gradients into a kernel-shaped buffer and returns the input gradient.
//! Kernels are generic over [`Real`] so the same code runs in single
//! precision for training and double precision for gradient checks.

mod activation;
mod conv;
mod loss;
mod pool;
mod tensor;
mod upsample;

pub use activation::{
    gated_activation, gated_activation_backward, relu, relu_backward, sigmoid,
};
pub use conv::{
    causal_conv, causal_conv_backward, causal_conv_naive, conv1x1, conv1x1_backward, same_conv,
    same_conv_backward,
};
pub use loss::{log_softmax_row, softmax_row, softmax_xent};
pub use pool::{mean_pool, mean_pool_backward};
pub use tensor::{ConvKernel, Real, Tensor2D};
pub use upsample::{
    repeat_upsample, repeat_upsample_backward, upsample_transposed, upsample_transposed_backward,
};
