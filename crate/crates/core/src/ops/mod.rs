//! Numeric kernels. All are pure functions of their arguments.

mod conv;
mod pointwise;
mod pool;

pub use conv::{conv2d, conv2d_transpose, output_extent};
pub use pointwise::{
    batchnorm_backward, batchnorm_inference, elementwise_add, global_avg_pool, global_avg_pool_backward,
    linear, linear_backward, relu_backward, relu_forward, BackwardMode, BatchNormParams,
};
pub use pool::{maxpool, unpool};
