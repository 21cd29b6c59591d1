//! Feedforward WaveNet with hand-written reverse-mode gradients.

mod gemm;
mod layers;
mod loss;
mod optim;
mod tensor;
mod wavenet;

pub use layers::{
    dilated_causal_conv, dilated_causal_conv_backward, exp_fast, gated_activation,
    gated_activation_backward, sigmoid_fast, tanh_fast, ConvScratch, ConvShape,
};
pub use loss::{loss_eq3, Emphasis, LossValue, SpectralLoss};
pub use optim::{
    adam_step, clip_grad_norm, AdamState, PlateauEvent, PlateauScheduler, TrainSchedule, ADAM_EPS,
    BETA1, BETA2,
};
pub use tensor::Tensor2;
pub use wavenet::{
    receptive_field, ForwardCache, Gradients, ParamLayout, ResidualWiring, WaveNetConfig,
    WaveNetModel, WaveNetParams,
};
