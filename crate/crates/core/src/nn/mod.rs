//! Small 1D convolutional network engine with manual reverse-mode
//! gradients. Training runs in `f32`; the same graph can be cast to `f64`
//! to verify gradients by finite differences.

mod gradcheck;
mod init;
mod layers;
mod loss;
mod network;
mod optim;
mod real;
mod tensor;

pub use gradcheck::{
    check_network, numeric_gradient, relative_error, GradCheckConfig, GradCheckReport,
};
pub use init::{he_normal_fill, he_normal_init};
pub use layers::{same_padding, Conv1d, Dense, Layer, LayerSpec, Param, Residual};
pub use loss::{bce_loss, cce_loss, logit_gradient, PROB_CLAMP};
pub use network::Network;
pub use optim::{Adam, PlateauScheduler};
pub use real::Real;
pub use tensor::Tensor;
