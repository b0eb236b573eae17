//! Variant configurations for the mask and strength ablations, the shared
//! evaluation split and the comparison report.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::animate::{generate, GenerationRequest};
use crate::codec::{encode_image, LATENT_FACTOR};
use crate::data::{sample_clip, DatasetItem};
use crate::error::{Error, Result};
use crate::eval::{aggregate, record_metrics, Aggregate, RecordMetrics};
use crate::mask::{downsample_mask, freeze_latent, synthesize_mask, MotionMask};
use crate::nn::{DenoiserModel, StrengthSignal};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::strength::strength;
use crate::tensor::VideoTensor;
use crate::train::TrainConfig;

/// One independently trained model. `MaskFreeze` is the full method and
/// doubles as the strength-guidance-plus-loss row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    NoMask,
    MaskNoFreeze,
    MaskFreeze,
    NoStrength,
    StrideGuidance,
    Strength,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NoMask,
        Variant::MaskNoFreeze,
        Variant::MaskFreeze,
        Variant::NoStrength,
        Variant::StrideGuidance,
        Variant::Strength,
    ];
    /// Rows of the mask-guidance comparison, weakest first.
    pub const MASK_ROWS: [Variant; 3] = [Variant::NoMask, Variant::MaskNoFreeze, Variant::MaskFreeze];
    /// Rows of the strength-guidance comparison, weakest first.
    pub const STRENGTH_ROWS: [Variant; 4] =
        [Variant::NoStrength, Variant::StrideGuidance, Variant::Strength, Variant::MaskFreeze];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoMask => "no-mask",
            Variant::MaskNoFreeze => "mask-no-freeze",
            Variant::MaskFreeze => "mask-freeze",
            Variant::NoStrength => "no-strength",
            Variant::StrideGuidance => "stride-guidance",
            Variant::Strength => "strength",
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.ckpt", self.name())
    }

    /// The base config with only this variant's mechanism removed.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let g = &mut cfg.model.guidance;
        match self {
            Variant::NoMask => {
                g.mask_input = false;
                g.freeze = false;
            }
            Variant::MaskNoFreeze => g.freeze = false,
            Variant::MaskFreeze => {}
            Variant::NoStrength => {
                g.strength_signal = StrengthSignal::None;
                cfg.lambda = 0.0;
            }
            Variant::StrideGuidance => {
                g.strength_signal = StrengthSignal::Stride;
                cfg.lambda = 0.0;
            }
            Variant::Strength => cfg.lambda = 0.0,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::MissingVariant(s.to_string()))
    }
}

/// A held-out generation task derived from a dataset clip.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub image: VideoTensor,
    /// Synthesized motion mask, widened to whole latent blocks.
    pub mask: MotionMask,
    pub class_id: usize,
    pub target_strength: f64,
    pub stride: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub steps: usize,
    pub frames: usize,
    pub threshold: f64,
}

impl EvalOptions {
    pub fn from_config(cfg: &TrainConfig, steps: usize) -> Self {
        Self { steps, frames: cfg.clip_length, threshold: cfg.threshold }
    }
}

/// Builds up to `count` cases from items whose clip shows motion. Targets
/// are measured exactly as during training.
pub fn build_eval_cases(dataset: &[DatasetItem], cfg: &TrainConfig, count: usize, seed: u64) -> Result<Vec<EvalCase>> {
    let root = Rng::new(seed);
    let mut cases = Vec::new();
    for (i, item) in dataset.iter().enumerate() {
        if cases.len() == count {
            break;
        }
        let mut r = root.derive(i as u64);
        let stride = cfg.strides[r.below(cfg.strides.len())];
        let (clip, _) = sample_clip(&item.video, stride, cfg.clip_length, &mut r)?;
        let latent = downsample_mask(&synthesize_mask(&clip, cfg.threshold)?, LATENT_FACTOR)?;
        if latent.is_empty() {
            continue;
        }
        let target = strength(&freeze_latent(&encode_image(&clip)?, &latent)?)?.0;
        cases.push(EvalCase {
            image: clip.frame_tensor(0),
            mask: latent.upsample(LATENT_FACTOR),
            class_id: item.spec.motion.id(),
            target_strength: target,
            stride,
            seed: r.next_u64(),
        });
    }
    if cases.is_empty() {
        return Err(Error::Empty("evaluation cases"));
    }
    Ok(cases)
}

impl EvalCase {
    pub fn request(&self, model: &DenoiserModel, opts: &EvalOptions) -> GenerationRequest {
        let value = match model.config().guidance.strength_signal {
            StrengthSignal::Stride => self.stride as f64,
            _ => self.target_strength,
        };
        GenerationRequest {
            image: self.image.clone(),
            mask: Some(self.mask.clone()),
            class_id: self.class_id,
            strength: value,
            frames: opts.frames,
            steps: opts.steps,
            seed: self.seed,
        }
    }
}

/// Generates every case with `model` and scores the outputs.
pub fn evaluate_model(
    model: &DenoiserModel,
    cases: &[EvalCase],
    opts: &EvalOptions,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<(Aggregate, Vec<RecordMetrics>)> {
    let mut records = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let video = generate(&case.request(model, opts), model, sched, &mut |_, _| {})?;
        records.push(record_metrics(&video, &case.mask, case.target_strength, opts.threshold)?);
        progress(i + 1, cases.len());
    }
    Ok((aggregate(&records)?, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    #[serde(flatten)]
    pub metrics: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&Aggregate> {
        self.rows.iter().find(|r| r.variant == v).map(|r| &r.metrics)
    }

    fn column(&self, vs: &[Variant], f: impl Fn(&Aggregate) -> f64) -> Vec<f64> {
        vs.iter().map(|&v| self.row(v).map(&f).unwrap_or(f64::NAN)).collect()
    }

    /// Precision for no-mask, mask-no-freeze, mask-freeze.
    pub fn mask_precisions(&self) -> Vec<f64> {
        self.column(&Variant::MASK_ROWS, |a| a.motion_mask_precision)
    }

    /// Strength error for no-strength, stride, strength, strength plus loss.
    pub fn strength_errors(&self) -> Vec<f64> {
        self.column(&Variant::STRENGTH_ROWS, |a| a.motion_strength_error)
    }

    pub fn mask_ordering_holds(&self) -> bool {
        self.mask_precisions().windows(2).all(|w| w[0] < w[1])
    }

    pub fn strength_ordering_holds(&self) -> bool {
        self.strength_errors().windows(2).all(|w| w[0] > w[1])
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:>10} {:>14} {:>12} {:>9}\n", "variant", "precision", "strength_err", "consistency", "no_motion");
        for r in &self.rows {
            let m = &r.metrics;
            out += &format!(
                "{:<16} {:>10.4} {:>14.6e} {:>12.4} {:>6}/{}\n",
                r.variant.name(),
                m.motion_mask_precision,
                m.motion_strength_error,
                m.frame_consistency,
                m.no_motion,
                m.records
            );
        }
        out
    }
}

/// Evaluates every variant on the same cases with the same seeds.
pub fn run_ablations(
    checkpoints: &BTreeMap<Variant, DenoiserModel>,
    cases: &[EvalCase],
    opts: &EvalOptions,
    sched: &NoiseSchedule,
    progress: &mut dyn FnMut(Variant, usize, usize),
) -> Result<AblationReport> {
    if let Some(v) = Variant::ALL.iter().find(|v| !checkpoints.contains_key(v)) {
        return Err(Error::MissingVariant(v.name().to_string()));
    }
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let (metrics, _) = evaluate_model(&checkpoints[&v], cases, opts, sched, &mut |d, n| progress(v, d, n))?;
        rows.push(AblationRow { variant: v, metrics });
    }
    Ok(AblationReport { rows })
}
