//! Motion strength: mean absolute inter-frame latent difference, the
//! strength loss, and the sinusoidal conditioning embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

/// Strengths are multiplied by this before the sinusoidal embedding.
pub const EMBED_SCALE: f64 = 1000.0;

/// Strength-loss weight used when nothing else is configured.
pub const DEFAULT_LAMBDA: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionStrength(pub f64);

impl MotionStrength {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-step loss breakdown; `total` is always `eps + lambda * strength`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_eps: f64,
    pub l_s: f64,
    pub lambda: f64,
    pub l: f64,
}

impl LossReport {
    pub fn new(l_eps: f64, l_s: f64, lambda: f64) -> Self {
        Self {
            l_eps,
            l_s,
            lambda,
            l: combined_loss(l_eps, l_s, lambda),
        }
    }
}

/// `(1/(N−1)) Σ_i mean|z^i − z^{i−1}|`.
pub fn strength(z: &VideoTensor) -> Result<MotionStrength> {
    let n = z.frames();
    if n < 2 {
        return Err(Error::TooFewFrames { what: "motion strength", need: 2, got: n });
    }
    let len = z.frame_len() as f64;
    let total: f64 = (1..n)
        .map(|i| {
            z.frame(i)
                .iter()
                .zip(z.frame(i - 1))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / len
        })
        .sum();
    Ok(MotionStrength(total / (n - 1) as f64))
}

/// Gradient of [`strength`] with respect to every element of `z`
/// (subgradient 0 where consecutive values tie).
pub fn strength_grad(z: &VideoTensor) -> Result<VideoTensor> {
    let n = z.frames();
    if n < 2 {
        return Err(Error::TooFewFrames { what: "motion strength", need: 2, got: n });
    }
    let scale = 1.0 / (z.frame_len() as f64 * (n - 1) as f64);
    let mut g = VideoTensor::filled(z.shape(), 0.0);
    let len = z.frame_len();
    for i in 1..n {
        for k in 0..len {
            let d = z.frame(i)[k] - z.frame(i - 1)[k];
            let s = if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            };
            g.frame_mut(i)[k] += s;
            g.frame_mut(i - 1)[k] -= s;
        }
    }
    Ok(g)
}

/// `(s(z0) − s(z0_hat))²`.
pub fn strength_loss(z0: &VideoTensor, z0_hat: &VideoTensor) -> Result<f64> {
    z0.ensure_same_shape(z0_hat, "strength loss")?;
    let d = strength(z0)?.0 - strength(z0_hat)?.0;
    Ok(d * d)
}

pub fn combined_loss(l_eps: f64, l_s: f64, lambda: f64) -> f64 {
    l_eps + lambda * l_s
}

/// Half-sine, half-cosine embedding over geometrically spaced frequencies
/// (base 10000), the same form used for timesteps.
pub fn sinusoidal_embedding(x: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::OddDimension(dim));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp())
        .collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|f| (x * f).sin()));
    out.extend(freqs.iter().map(|f| (x * f).cos()));
    Ok(out)
}

/// Embedding of a (non-negative) strength after scaling by [`EMBED_SCALE`].
pub fn strength_embedding(s: f64, dim: usize) -> Result<Vec<f64>> {
    if !(s >= 0.0) {
        return Err(Error::InvalidRange(format!("strength must be >= 0, got {s}")));
    }
    sinusoidal_embedding(s * EMBED_SCALE, dim)
}
