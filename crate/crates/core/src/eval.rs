//! Motion Mask Precision, Motion Strength Error and Frame Consistency.

use serde::{Deserialize, Serialize};

use crate::codec::encode_image;
use crate::error::{Error, Result};
use crate::mask::{frame_diff_mask, to_grayscale, MotionMask};
use crate::strength::{strength, MotionStrength};
use crate::tensor::VideoTensor;

/// Side of the square pooling window for consistency features.
pub const FEATURE_POOL: usize = 8;

/// Fraction of detected moving pixels that fall inside `mask`; 1.0 when
/// nothing moves.
pub fn motion_mask_precision(generated: &VideoTensor, mask: &MotionMask, threshold: f64) -> Result<f64> {
    Ok(mask_precision_detail(generated, mask, threshold)?.0)
}

/// Precision plus the number of moving pixels it was computed from.
pub fn mask_precision_detail(generated: &VideoTensor, mask: &MotionMask, threshold: f64) -> Result<(f64, usize)> {
    if generated.height() != mask.height() || generated.width() != mask.width() {
        return Err(Error::ShapeMismatch(format!(
            "video {}x{} vs mask {}x{}",
            generated.height(),
            generated.width(),
            mask.height(),
            mask.width()
        )));
    }
    let moving = frame_diff_mask(&to_grayscale(generated)?, threshold)?;
    let total = moving.area();
    if total == 0 {
        return Ok((1.0, 0));
    }
    Ok((moving.intersection_area(mask)? as f64 / total as f64, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    /// Pixel-space generated video.
    pub generated: VideoTensor,
    pub target_strength: MotionStrength,
}

/// Achieved strength of a pixel video, measured in latent space.
pub fn achieved_strength(generated: &VideoTensor) -> Result<f64> {
    Ok(strength(&encode_image(generated)?)?.0)
}

/// Mean squared gap between achieved and target strengths.
pub fn motion_strength_error(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let total = records
        .iter()
        .map(|r| Ok((achieved_strength(&r.generated)? - r.target_strength.0).powi(2)))
        .sum::<Result<f64>>()?;
    Ok(total / records.len() as f64)
}

fn pooled_features(gray: &VideoTensor, frame: usize) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let mut out = Vec::new();
    for by in (0..h).step_by(FEATURE_POOL) {
        for bx in (0..w).step_by(FEATURE_POOL) {
            let (ye, xe) = ((by + FEATURE_POOL).min(h), (bx + FEATURE_POOL).min(w));
            let mut acc = 0.0;
            for y in by..ye {
                for x in bx..xe {
                    acc += gray.get(frame, 0, y, x);
                }
            }
            out.push(acc / ((ye - by) * (xe - bx)) as f64);
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// Mean cosine similarity of pooled grayscale features of consecutive frames.
pub fn frame_consistency(generated: &VideoTensor) -> Result<f64> {
    let n = generated.frames();
    if n < 2 {
        return Err(Error::TooFewFrames { what: "frame consistency", need: 2, got: n });
    }
    let gray = to_grayscale(generated)?;
    let feats: Vec<Vec<f64>> = (0..n).map(|f| pooled_features(&gray, f)).collect();
    Ok(feats.windows(2).map(|p| cosine(&p[0], &p[1])).sum::<f64>() / (n - 1) as f64)
}

/// Metrics for one generated video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub precision: f64,
    pub moving_pixels: usize,
    pub achieved_strength: f64,
    pub target_strength: f64,
    pub consistency: f64,
}

pub fn record_metrics(generated: &VideoTensor, mask: &MotionMask, target: f64, threshold: f64) -> Result<RecordMetrics> {
    let (precision, moving_pixels) = mask_precision_detail(generated, mask, threshold)?;
    Ok(RecordMetrics {
        precision,
        moving_pixels,
        achieved_strength: achieved_strength(generated)?,
        target_strength: target,
        consistency: frame_consistency(generated)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub motion_mask_precision: f64,
    pub motion_strength_error: f64,
    pub frame_consistency: f64,
    /// Records whose output had no detectable motion (vacuous precision).
    pub no_motion: usize,
    pub records: usize,
}

pub fn aggregate(records: &[RecordMetrics]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let n = records.len() as f64;
    Ok(Aggregate {
        motion_mask_precision: records.iter().map(|r| r.precision).sum::<f64>() / n,
        motion_strength_error: records
            .iter()
            .map(|r| (r.achieved_strength - r.target_strength).powi(2))
            .sum::<f64>()
            / n,
        frame_consistency: records.iter().map(|r| r.consistency).sum::<f64>() / n,
        no_motion: records.iter().filter(|r| r.moving_pixels == 0).count(),
        records: records.len(),
    })
}
