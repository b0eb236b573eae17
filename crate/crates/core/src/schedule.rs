//! DDPM noise schedule, closed-form forward process and ẑ₀ estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::VideoTensor;

/// Parameters that reproduce a [`NoiseSchedule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Per-timestep `β_t` and cumulative `ᾱ_t`, indexed by `t = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end` over `timesteps` steps.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidRange("timestep count must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidRange("timestep count must be >= 1".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidRange(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bar = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `ᾱ_t`; `t = 0` maps to 1 (clean signal).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::InvalidRange(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

/// `√ᾱ · z0 + √(1−ᾱ) · eps` for an explicit `ᾱ`.
pub fn noise_with_alpha_bar(z0: &VideoTensor, eps: &VideoTensor, alpha_bar: f64) -> Result<VideoTensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.zip_map(eps, |z, e| a * z + b * e)
}

/// `(zt − √(1−ᾱ) · eps) / √ᾱ` for an explicit `ᾱ > 0`.
pub fn z0_with_alpha_bar(zt: &VideoTensor, eps_pred: &VideoTensor, alpha_bar: f64) -> Result<VideoTensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    zt.zip_map(eps_pred, |z, e| (z - b * e) / a)
}

/// Samples `z_t` from `z_0` in closed form.
pub fn forward_noise(z0: &VideoTensor, t: usize, eps: &VideoTensor, sched: &NoiseSchedule) -> Result<VideoTensor> {
    sched.check_t(t)?;
    noise_with_alpha_bar(z0, eps, sched.alpha_bar(t))
}

/// The one-step clean-latent estimate from a noise prediction.
pub fn estimate_z0(zt: &VideoTensor, eps_pred: &VideoTensor, t: usize, sched: &NoiseSchedule) -> Result<VideoTensor> {
    sched.check_t(t)?;
    z0_with_alpha_bar(zt, eps_pred, sched.alpha_bar(t))
}

/// Terminal latent for inference: every frame is the reference noised to
/// `t = T`, each with its own independent Gaussian draw.
pub fn shared_noise_init(z_ref: &VideoTensor, frames: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<VideoTensor> {
    if z_ref.frames() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "reference latent must have 1 frame, got {}",
            z_ref.frames()
        )));
    }
    if frames == 0 {
        return Err(Error::InvalidRange("frame count must be >= 1".into()));
    }
    let alpha_bar = sched.alpha_bar(sched.timesteps());
    let mut out = Vec::with_capacity(frames * z_ref.frame_len());
    for _ in 0..frames {
        let eps = rng.gaussian_like(z_ref.shape());
        out.extend(noise_with_alpha_bar(z_ref, &eps, alpha_bar)?.into_vec());
    }
    let [_, c, h, w] = z_ref.shape();
    VideoTensor::from_vec([frames, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> VideoTensor {
        VideoTensor::from_vec([1, 1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0 - 0.3]);
    }

    #[test]
    fn default_terminal_alpha_bar_matches_high_precision_product() {
        // 50-digit product of (1 - beta_t), computed offline.
        let oracle = 4.035_829_765_375_683_3e-5;
        let s = ScheduleConfig::default().build().unwrap();
        let got = s.alpha_bar(1000);
        assert!(((got - oracle) / oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = ScheduleConfig::default().build().unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1) < 1.0 && s.alpha_bar(1000) > 0.0);
    }

    #[test]
    fn forward_noise_examples() {
        let z0 = scalar(2.0);
        let eps = scalar(1.0);
        assert_eq!(noise_with_alpha_bar(&z0, &eps, 1.0).unwrap(), z0);
        let zero = scalar(0.0);
        let out = noise_with_alpha_bar(&zero, &eps, 0.4).unwrap();
        assert_eq!(out.data()[0], 0.6f64.sqrt());
        let out = noise_with_alpha_bar(&z0, &eps, 0.25).unwrap();
        assert!((out.data()[0] - 1.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn estimate_z0_examples() {
        let out = z0_with_alpha_bar(&scalar(1.866), &scalar(1.0), 0.25).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-3);
        let out = z0_with_alpha_bar(&scalar(3.0), &scalar(0.0), 0.25).unwrap();
        assert_eq!(out.data()[0], 6.0);
    }

    #[test]
    fn forward_noise_rejects_shape_and_timestep() {
        let s = NoiseSchedule::linear(10, 0.01, 0.02).unwrap();
        let a = VideoTensor::zeros(1, 1, 2, 2);
        let b = VideoTensor::zeros(1, 1, 2, 3);
        assert!(matches!(forward_noise(&a, 1, &b, &s), Err(Error::ShapeMismatch(_))));
        assert!(forward_noise(&a, 0, &a, &s).is_err());
        assert!(forward_noise(&a, 11, &a, &s).is_err());
    }

    #[test]
    fn shared_noise_frames_are_distinct_and_reproducible() {
        let s = ScheduleConfig::default().build().unwrap();
        let z_ref = VideoTensor::filled([1, 1, 4, 4], 0.5);
        let a = shared_noise_init(&z_ref, 3, &s, &mut Rng::new(9)).unwrap();
        let b = shared_noise_init(&z_ref, 3, &s, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames(), 3);
        assert_ne!(a.frame(0), a.frame(1));
        assert!(shared_noise_init(&a, 2, &s, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn shared_noise_limit_is_pure_noise() {
        let s = NoiseSchedule::from_betas(vec![1.0 - 1e-14]).unwrap();
        let z_ref = VideoTensor::filled([1, 1, 2, 2], 1.0);
        let got = shared_noise_init(&z_ref, 2, &s, &mut Rng::new(4)).unwrap();
        let mut r = Rng::new(4);
        let expect: Vec<f64> = r.gaussian_vec(8);
        for (g, e) in got.data().iter().zip(&expect) {
            assert!((g - e).abs() < 1e-6);
        }
    }
}
