//! Tensor core for the two networks: forward operations with exact
//! gradients, weight initialization and Adam.

mod adam;
mod gemm;
mod init;
pub mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{fan_in_uniform, lecun_normal};
pub use ops::{
    conv2d_backward, conv2d_valid, dense, dense_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax, softmax_backward, ConvGrads, DenseGrads,
};
pub use tensor::Tensor;
