//! Deterministic DDIM sampling (η = 0) with reference-frame concatenation.

use crate::error::{Error, Result};
use crate::mask::MotionMask;
use crate::nn::{Conditioning, DenoiserModel};
use crate::rng::Rng;
use crate::schedule::{shared_noise_init, NoiseSchedule};
use crate::tensor::VideoTensor;

/// Anything that predicts noise for an `(N+1)`-frame input whose frame 0 is
/// the clean reference latent.
pub trait NoisePredictor {
    fn predict(&self, z_in: &VideoTensor, mask: &MotionMask, t: usize, cond: &Conditioning) -> Result<VideoTensor>;
}

impl NoisePredictor for DenoiserModel {
    fn predict(&self, z_in: &VideoTensor, mask: &MotionMask, t: usize, cond: &Conditioning) -> Result<VideoTensor> {
        self.forward(z_in, mask, t, cond)
    }
}

/// Everything the sampler needs besides the model and schedule.
#[derive(Clone, Debug)]
pub struct SampleSpec<'a> {
    pub z_ref: &'a VideoTensor,
    /// Latent-resolution mask as fed to the model.
    pub mask: &'a MotionMask,
    pub cond: Conditioning,
    pub frames: usize,
    pub steps: usize,
}

/// Uniformly strided descending timesteps, starting at `T`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidRange(format!("steps must be in 1..={total}, got {steps}")));
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|k| total - ((k * total) as f64 / steps as f64).floor() as usize)
        .collect();
    ts.dedup();
    Ok(ts)
}

/// Runs DDIM from `init` (an `N`-frame noisy latent at `t = T`).
pub fn ddim_from<P: NoisePredictor + ?Sized>(
    model: &P,
    spec: &SampleSpec<'_>,
    init: VideoTensor,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<VideoTensor> {
    if spec.z_ref.frames() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "reference latent must have 1 frame, got {}",
            spec.z_ref.frames()
        )));
    }
    if init.shape()[1..] != spec.z_ref.shape()[1..] {
        return Err(Error::ShapeMismatch(format!(
            "initial latent {:?} vs reference {:?}",
            init.shape(),
            spec.z_ref.shape()
        )));
    }
    let ts = ddim_timesteps(sched.timesteps(), spec.steps)?;
    let n = init.frames();
    let mut z = init;
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let z_in = spec.z_ref.concat_frames(&z)?;
        let out = model.predict(&z_in, spec.mask, t, &spec.cond)?;
        if out.shape() != z_in.shape() {
            return Err(Error::InvalidConfig(format!(
                "predictor returned {:?} for input {:?}",
                out.shape(),
                z_in.shape()
            )));
        }
        let eps = out.frame_range(1, n);
        let (a_t, a_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
        let (sa, sb) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let (pa, pb) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
        z = z.zip_map(&eps, |zt, e| {
            let z0 = (zt - sb * e) / sa;
            pa * z0 + pb * e
        })?;
        progress(k + 1, ts.len());
    }
    Ok(z)
}

/// Shared-noise initialization followed by DDIM; returns `N` latent frames.
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    spec: &SampleSpec<'_>,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<VideoTensor> {
    let init = shared_noise_init(spec.z_ref, spec.frames, sched, rng)?;
    ddim_from(model, spec, init, sched, progress)
}
