//! Inference: single-region generation and layered multi-region composition.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_latent, encode_image, LATENT_FACTOR};
use crate::error::{Error, Result};
use crate::mask::{downsample_mask, freeze_latent, MotionMask, Resolution};
use crate::nn::{Conditioning, DenoiserModel};
use crate::rng::Rng;
use crate::sampler::{ddim_sample, SampleSpec};
use crate::schedule::NoiseSchedule;
use crate::tensor::VideoTensor;

pub const DEFAULT_FRAMES: usize = 8;
pub const DEFAULT_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    /// Grayscale reference image, `1 × 1 × H × W`, values in `[0, 1]`.
    pub image: VideoTensor,
    /// Pixel-resolution movable area; `None` means everything may move.
    pub mask: Option<MotionMask>,
    pub class_id: usize,
    /// Target motion strength in latent units (for stride-conditioned
    /// models, the stride).
    pub strength: f64,
    pub frames: usize,
    pub steps: usize,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(image: VideoTensor, mask: Option<MotionMask>, class_id: usize, strength: f64, seed: u64) -> Self {
        Self {
            image,
            mask,
            class_id,
            strength,
            frames: DEFAULT_FRAMES,
            steps: DEFAULT_STEPS,
            seed,
        }
    }

    /// The request mask, or all-ones when absent.
    pub fn pixel_mask(&self) -> MotionMask {
        self.mask
            .clone()
            .unwrap_or_else(|| MotionMask::ones(self.image.height(), self.image.width(), Resolution::Pixel))
    }

    pub fn validate(&self, model: &DenoiserModel) -> Result<()> {
        let [n, c, h, w] = self.image.shape();
        if n != 1 || c != 1 {
            return Err(Error::ShapeMismatch(format!("reference must be one grayscale frame, got {:?}", self.image.shape())));
        }
        if !self.image.is_pixel_range() {
            return Err(Error::InvalidRange("reference pixels must lie in [0, 1]".into()));
        }
        let cfg = model.config();
        let expect = cfg.latent_hw * LATENT_FACTOR;
        if h != expect || w != expect {
            return Err(Error::ShapeMismatch(format!("model expects {expect}x{expect} images, got {h}x{w}")));
        }
        if let Some(m) = &self.mask {
            if m.height() != h || m.width() != w {
                return Err(Error::ShapeMismatch(format!("mask {}x{} vs image {h}x{w}", m.height(), m.width())));
            }
        }
        if self.frames == 0 || self.steps == 0 {
            return Err(Error::InvalidRange("frames and steps must be >= 1".into()));
        }
        if self.class_id >= cfg.num_classes {
            return Err(Error::InvalidConfig(format!("class id {} outside 0..{}", self.class_id, cfg.num_classes)));
        }
        if !(self.strength >= 0.0) {
            return Err(Error::InvalidRange(format!("strength must be >= 0, got {}", self.strength)));
        }
        Ok(())
    }
}

/// Latent-resolution mask used for both conditioning and the output freeze.
pub fn latent_mask(req: &GenerationRequest) -> Result<MotionMask> {
    downsample_mask(&req.pixel_mask(), LATENT_FACTOR)
}

/// Generates the latent video; frame 0 is the encoded reference and, for
/// freeze-trained models, everything outside the mask stays at frame 0.
pub fn generate_latent(
    req: &GenerationRequest,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<VideoTensor> {
    req.validate(model)?;
    let z_ref = encode_image(&req.image)?;
    let mask = latent_mask(req)?;
    let guidance = model.config().guidance;
    let model_mask = if guidance.mask_input {
        mask.clone()
    } else {
        MotionMask::ones(mask.height(), mask.width(), Resolution::Latent)
    };
    let spec = SampleSpec {
        z_ref: &z_ref,
        mask: &model_mask,
        cond: Conditioning {
            value: model.condition_value(req.strength, req.strength.round().max(0.0) as usize),
            class_id: req.class_id,
        },
        frames: req.frames,
        steps: req.steps,
    };
    let mut z = ddim_sample(model, &spec, sched, &mut Rng::new(req.seed), progress)?;
    z.frame_mut(0).copy_from_slice(z_ref.data());
    if guidance.freeze {
        z = freeze_latent(&z, &mask)?;
    }
    Ok(z)
}

/// Full pixel-space generation.
pub fn generate(
    req: &GenerationRequest,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<VideoTensor> {
    Ok(decode_latent(&generate_latent(req, model, sched, progress)?).clamp_pixels())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionLayer {
    #[serde(skip)]
    pub mask: Option<MotionMask>,
    pub class_id: usize,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionRequest {
    pub image: VideoTensor,
    pub layers: Vec<CompositionLayer>,
    pub frames: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Seed for layer `k`; layer 0 uses the request seed itself.
pub fn layer_seed(seed: u64, layer: usize) -> u64 {
    if layer == 0 {
        seed
    } else {
        Rng::new(seed).derive(layer as u64).next_u64()
    }
}

impl CompositionRequest {
    pub fn layer_request(&self, k: usize) -> GenerationRequest {
        let layer = &self.layers[k];
        GenerationRequest {
            image: self.image.clone(),
            mask: layer.mask.clone(),
            class_id: layer.class_id,
            strength: layer.strength,
            frames: self.frames,
            steps: self.steps,
            seed: layer_seed(self.seed, k),
        }
    }
}

/// Animates each layer from the original reference and merges the results
/// in order; later layers win where masks overlap.
pub fn compose(
    req: &CompositionRequest,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<VideoTensor> {
    if req.layers.is_empty() {
        return Err(Error::Empty("composition layers"));
    }
    let base = decode_latent(&encode_image(&req.image)?).clamp_pixels();
    let mut merged = base.repeat_frame(req.frames)?;
    let total = req.layers.len();
    for k in 0..total {
        let layer_req = req.layer_request(k);
        let video = generate(&layer_req, model, sched, &mut |done, steps| {
            progress(k * steps + done, total * steps);
        })?;
        // Merge on the latent-block footprint so single-layer output equals `generate`.
        let m = latent_mask(&layer_req)?.upsample(LATENT_FACTOR);
        let plane = m.height() * m.width();
        for f in 0..req.frames {
            let (dst, src) = (merged.frame_mut(f), video.frame(f));
            for (i, &movable) in m.as_slice().iter().enumerate() {
                if movable {
                    dst[i % plane] = src[i % plane];
                }
            }
        }
    }
    Ok(merged)
}
