//! Latent video diffusion for controllable image animation.
//!
//! The crate covers the whole numerical pipeline: a 2× average-pool latent
//! codec, the DDPM forward process and deterministic DDIM sampling with
//! shared-noise initialization, unsupervised motion-area masks built from
//! frame differences, the motion-strength metric and loss, a small
//! 3D-convolutional denoiser with hand-written backpropagation, the
//! procedural moving-shapes dataset and training loop, evaluation metrics,
//! and the generate/compose inference paths used by the service.

pub mod ablation;
pub mod animate;
pub mod codec;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod mask;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod strength;
pub mod tensor;
pub mod train;

pub use animate::{compose, generate, layer_seed, CompositionLayer, CompositionRequest, GenerationRequest};
pub use error::{Error, Result};
pub use mask::{MotionMask, Resolution};
pub use nn::{Conditioning, DenoiserConfig, DenoiserModel, GuidanceConfig, StrengthSignal};
pub use rng::Rng;
pub use schedule::NoiseSchedule;
pub use strength::{LossReport, MotionStrength};
pub use tensor::VideoTensor;
pub use train::{TrainBatch, TrainConfig};
