//! The trainable noise predictor.

mod denoiser;
pub(crate) mod ops;

pub use denoiser::{
    build_model, load_checkpoint, parameter_gradients, save_checkpoint, CheckpointHeader, Conditioning,
    DenoiserConfig, DenoiserModel, Gradients, GuidanceConfig, Param, StrengthRange, StrengthSignal,
};
