//! Forward kernels and their backward rules, on plain tensors.
//!
//! Everything here is pure. The autodiff layer in [`crate::graph`] wires
//! these together; callers that only need inference can use them directly.

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod reduce;

pub use conv::{avg_pool2d, conv2d, depthwise_conv2d, same_padding};
pub use elementwise::{add, gelu, gelu_scalar, mul, scale, sigmoid, sigmoid_scalar, silu};
pub use linalg::{linear, matmul};
pub use loss::{cross_entropy, emd};
pub use norm::{batch_norm_infer, batch_norm_train, layer_norm, BatchStats, NORM_EPS};
pub use reduce::{mean_axes, softmax_lastdim};
