//! Batch construction and the AdamW training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_image, LATENT_FACTOR};
use crate::data::{sample_clip, DatasetItem, NULL_CLASS};
use crate::error::{Error, Result};
use crate::mask::{downsample_mask, freeze_latent, synthesize_mask, MotionMask, Resolution, DEFAULT_THRESHOLD};
use crate::nn::{build_model, parameter_gradients, DenoiserConfig, DenoiserModel, Gradients, StrengthRange};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::schedule::ScheduleConfig;
use crate::strength::{strength, MotionStrength, DEFAULT_LAMBDA};
use crate::tensor::VideoTensor;

/// One training example after mask synthesis and freezing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub z0_prime: VideoTensor,
    /// Latent-resolution mask fed to the model.
    pub mask: MotionMask,
    pub t: usize,
    pub eps: VideoTensor,
    pub s_target: MotionStrength,
    pub class_id: usize,
    /// Clip sampling stride (frame-rate stand-in).
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub lambda: f64,
    pub threshold: f64,
    pub clip_length: usize,
    pub source_clip_length: usize,
    pub strides: Vec<usize>,
    pub class_dropout: f64,
    pub mask_dropout: f64,
    pub seed: u64,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 2,
            optimizer: AdamWConfig::default(),
            lambda: DEFAULT_LAMBDA,
            threshold: DEFAULT_THRESHOLD,
            clip_length: 8,
            source_clip_length: 24,
            strides: vec![1, 2, 3],
            class_dropout: 0.1,
            mask_dropout: 0.1,
            seed: 0,
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Full-scale optimizer settings (learning rate 5e-5, 10,000 iterations).
    pub fn paper_preset() -> Self {
        Self {
            iterations: 10_000,
            optimizer: AdamWConfig {
                learning_rate: 5e-5,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad(format!("strides must be non-empty and positive, got {:?}", self.strides));
        }
        for (name, p) in [("class_dropout", self.class_dropout), ("mask_dropout", self.mask_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.clip_length < 2 {
            return bad("clip_length must be >= 2".into());
        }
        let max_stride = *self.strides.iter().max().unwrap();
        if (self.clip_length - 1) * max_stride >= self.source_clip_length {
            return bad(format!(
                "clip of {} frames at stride {max_stride} does not fit {} source frames",
                self.clip_length, self.source_clip_length
            ));
        }
        if !(self.lambda >= 0.0) || !(self.threshold >= 0.0) {
            return bad("lambda and threshold must be >= 0".into());
        }
        self.model.validate()?;
        self.schedule.build().map(|_| ())
    }
}

/// Samples a clip, builds its mask, freezes the target latent and draws the
/// diffusion timestep and noise.
pub fn make_train_batch(item: &DatasetItem, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainBatch> {
    let stride = cfg.strides[rng.below(cfg.strides.len())];
    let (clip, _) = sample_clip(&item.video, stride, cfg.clip_length, rng)?;
    let z0 = encode_image(&clip)?;
    let pixel_mask = synthesize_mask(&clip, cfg.threshold)?;
    let mut mask = downsample_mask(&pixel_mask, LATENT_FACTOR)?;

    let drop_class = rng.chance(cfg.class_dropout);
    let drop_mask = rng.chance(cfg.mask_dropout);
    let guidance = cfg.model.guidance;
    if drop_mask || !guidance.mask_input {
        mask = MotionMask::ones(mask.height(), mask.width(), Resolution::Latent);
    }
    let z0_prime = if guidance.freeze { freeze_latent(&z0, &mask)? } else { z0 };
    let s_target = strength(&z0_prime)?;
    let t = 1 + rng.below(cfg.schedule.timesteps);
    let eps = rng.gaussian_like(z0_prime.shape());
    let class_id = if drop_class { NULL_CLASS } else { item.spec.motion.id() };
    Ok(TrainBatch {
        z0_prime,
        mask,
        t,
        eps,
        s_target,
        class_id,
        stride,
    })
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: usize,
    pub l_eps: f64,
    pub l_s: f64,
    pub lambda: f64,
    pub l: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    pub log: Vec<StepLog>,
}

pub fn write_log(w: &mut impl Write, log: &[StepLog]) -> Result<()> {
    for step in log {
        serde_json::to_writer(&mut *w, step)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Median/min/max of clip strengths over a fixed sample of training batches.
pub fn strength_range(dataset: &[DatasetItem], cfg: &TrainConfig, samples: usize) -> Result<StrengthRange> {
    let rng = Rng::new(cfg.seed).derive(0x5747);
    let mut values = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut r = rng.derive(i as u64);
        let item = &dataset[r.below(dataset.len())];
        let stride = cfg.strides[r.below(cfg.strides.len())];
        let (clip, _) = sample_clip(&item.video, stride, cfg.clip_length, &mut r)?;
        values.push(strength(&encode_image(&clip)?)?.0);
    }
    values.sort_by(f64::total_cmp);
    let first = *values.first().ok_or(Error::Empty("strength sample"))?;
    Ok(StrengthRange {
        min: first,
        median: values[values.len() / 2],
        max: *values.last().unwrap(),
    })
}

/// Trains from scratch; `progress(done, total)` fires after every iteration.
pub fn train(cfg: &TrainConfig, dataset: &[DatasetItem], progress: &mut dyn FnMut(usize, usize)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let sched = cfg.schedule.build()?;
    let root = Rng::new(cfg.seed);
    let mut model = build_model(cfg.model, &mut root.derive(0))?;
    model.strength_range = Some(strength_range(dataset, cfg, 256)?);
    model.schedule = cfg.schedule;
    let mut opt = AdamW::new(cfg.optimizer);
    let mut log = Vec::with_capacity(cfg.iterations);
    let batch_rng = root.derive(1);

    for it in 0..cfg.iterations {
        let it_rng = batch_rng.derive(it as u64);
        let mut sum: Option<Gradients> = None;
        let (mut l_eps, mut l_s) = (0.0, 0.0);
        for b in 0..cfg.batch_size {
            let mut r = it_rng.derive(b as u64);
            let item = &dataset[r.below(dataset.len())];
            let batch = make_train_batch(item, cfg, &mut r)?;
            let (report, grads) = parameter_gradients(&model, &batch, &sched, cfg.lambda)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { iteration: it },
                    other => other,
                })?;
            l_eps += report.l_eps;
            l_s += report.l_s;
            match sum.as_mut() {
                None => sum = Some(grads),
                Some(acc) => {
                    for (k, g) in grads {
                        for (a, v) in acc.get_mut(&k).expect("same layout").iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        let mut grads = sum.expect("batch_size >= 1");
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
        let report = crate::strength::LossReport::new(l_eps * scale, l_s * scale, cfg.lambda);
        if !report.l.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        opt.step(&mut model, &grads);
        log.push(StepLog {
            iteration: it,
            l_eps: report.l_eps,
            l_s: report.l_s,
            lambda: report.lambda,
            l: report.l,
        });
        progress(it + 1, cfg.iterations);
    }
    Ok(TrainOutcome { model, log })
}

/// Mean of `values` over the first and last `fraction` of the run.
pub fn head_tail_means(values: &[f64], fraction: f64) -> (f64, f64) {
    let k = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len().max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&values[..k]), mean(&values[values.len() - k..]))
}
