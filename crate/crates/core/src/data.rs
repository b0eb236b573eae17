//! Procedural moving-shapes videos with analytic ground-truth masks.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{load_mask, load_video, save_mask, save_video};
use crate::error::{Error, Result};
use crate::mask::{MotionMask, Resolution};
use crate::rng::Rng;
use crate::tensor::VideoTensor;

pub const MIN_SOURCE_FRAMES: usize = 24;
const MAX_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    /// Whether pixel `(i, j)` of an `s × s` bounding box is covered.
    fn covers(self, i: usize, j: usize, s: usize) -> bool {
        let half = s as f64 / 2.0;
        let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => (cx - half).powi(2) + (cy - half).powi(2) <= half * half,
            ShapeKind::Triangle => (cx - half).abs() <= (j + 1) as f64 / s as f64 * half,
        }
    }
}

/// Motion classes; id 0 is reserved for the null (dropped) class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionClass {
    Static,
    Left,
    Right,
    Up,
    Down,
    Grow,
    Shrink,
}

pub const NULL_CLASS: usize = 0;

impl MotionClass {
    pub const ALL: [MotionClass; 7] = [
        MotionClass::Static,
        MotionClass::Left,
        MotionClass::Right,
        MotionClass::Up,
        MotionClass::Down,
        MotionClass::Grow,
        MotionClass::Shrink,
    ];

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap() + 1
    }

    pub fn from_id(id: usize) -> Option<Self> {
        id.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Static => "static",
            MotionClass::Left => "left",
            MotionClass::Right => "right",
            MotionClass::Up => "up",
            MotionClass::Down => "down",
            MotionClass::Grow => "grow",
            MotionClass::Shrink => "shrink",
        }
    }

    /// Unit displacement per frame for translations.
    fn direction(self) -> (f64, f64) {
        match self {
            MotionClass::Left => (-1.0, 0.0),
            MotionClass::Right => (1.0, 0.0),
            MotionClass::Up => (0.0, -1.0),
            MotionClass::Down => (0.0, 1.0),
            _ => (0.0, 0.0),
        }
    }

    fn size_rate(self) -> f64 {
        match self {
            MotionClass::Grow => 1.0,
            MotionClass::Shrink => -1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticShape {
    pub kind: ShapeKind,
    pub size: usize,
    /// Top-left corner `(x, y)`.
    pub position: (usize, usize),
    pub intensity: f64,
}

/// One video: a (possibly moving) primary shape plus static distractors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeVideoSpec {
    pub kind: ShapeKind,
    /// Side length (or diameter) at frame 0, in pixels.
    pub size: f64,
    /// Top-left corner `(x, y)` at frame 0.
    pub position: (f64, f64),
    pub motion: MotionClass,
    /// Pixels per source frame (translation) or size change per frame.
    pub speed: f64,
    pub intensity: f64,
    pub background: f64,
    #[serde(default)]
    pub distractors: Vec<StaticShape>,
}

/// Integer bounding box of the primary shape at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Footprint {
    left: i64,
    top: i64,
    size: i64,
}

impl ShapeVideoSpec {
    fn footprint(&self, frame: usize) -> Footprint {
        let f = frame as f64;
        let (dx, dy) = self.motion.direction();
        let rate = self.motion.size_rate();
        if rate == 0.0 {
            Footprint {
                left: (self.position.0 + dx * self.speed * f).round() as i64,
                top: (self.position.1 + dy * self.speed * f).round() as i64,
                size: self.size.round() as i64,
            }
        } else {
            let s = (self.size + rate * self.speed * f).round();
            let (cx, cy) = (self.position.0 + self.size / 2.0, self.position.1 + self.size / 2.0);
            Footprint {
                left: (cx - s / 2.0).round() as i64,
                top: (cy - s / 2.0).round() as i64,
                size: s as i64,
            }
        }
    }

    /// Checks the class/speed pairing and that the shape stays inside the frame.
    pub fn validate(&self, image_size: usize, frames: usize) -> Result<()> {
        if self.speed < 0.0 || (self.speed == 0.0) != (self.motion == MotionClass::Static) {
            return Err(Error::InfeasibleSpec(format!(
                "speed {} does not match class {:?}",
                self.speed, self.motion
            )));
        }
        for f in 0..frames {
            let fp = self.footprint(f);
            if fp.size < 2 || fp.left < 0 || fp.top < 0 || fp.left + fp.size > image_size as i64 || fp.top + fp.size > image_size as i64 {
                return Err(Error::InfeasibleSpec(format!("shape leaves the {image_size}px frame at frame {f}")));
            }
        }
        for d in &self.distractors {
            if d.position.0 + d.size > image_size || d.position.1 + d.size > image_size {
                return Err(Error::InfeasibleSpec("distractor outside frame".into()));
            }
        }
        Ok(())
    }

    fn shape_mask(&self, frame: usize, image_size: usize) -> MotionMask {
        let fp = self.footprint(frame);
        let s = fp.size as usize;
        MotionMask::from_fn(image_size, image_size, Resolution::Pixel, |y, x| {
            let (i, j) = (x as i64 - fp.left, y as i64 - fp.top);
            i >= 0 && j >= 0 && i < fp.size && j < fp.size && self.kind.covers(i as usize, j as usize, s)
        })
    }

    /// Union of the primary shape's footprint over `frames` frames; empty for
    /// static videos.
    pub fn swept_mask(&self, image_size: usize, frames: usize) -> MotionMask {
        let mut m = MotionMask::zeros(image_size, image_size, Resolution::Pixel);
        if self.motion == MotionClass::Static {
            return m;
        }
        for f in 0..frames {
            m = m.union(&self.shape_mask(f, image_size)).expect("same size");
        }
        m
    }

    /// Renders a single-channel `frames × 1 × size × size` video.
    pub fn render(&self, image_size: usize, frames: usize) -> Result<VideoTensor> {
        self.validate(image_size, frames)?;
        let mut background = vec![self.background; image_size * image_size];
        for d in &self.distractors {
            for j in 0..d.size {
                for i in 0..d.size {
                    if d.kind.covers(i, j, d.size) {
                        background[(d.position.1 + j) * image_size + d.position.0 + i] = d.intensity;
                    }
                }
            }
        }
        let mut data = Vec::with_capacity(frames * background.len());
        for f in 0..frames {
            let shape = self.shape_mask(f, image_size);
            data.extend(
                background
                    .iter()
                    .zip(shape.as_slice())
                    .map(|(&b, &inside)| if inside { self.intensity } else { b }),
            );
        }
        VideoTensor::from_vec([frames, 1, image_size, image_size], data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub video: VideoTensor,
    pub spec: ShapeVideoSpec,
    pub gt_mask: MotionMask,
}

fn random_spec(image_size: usize, frames: usize, rng: &mut Rng) -> Result<ShapeVideoSpec> {
    let n = image_size as f64;
    let span = (frames - 1) as f64;
    for _ in 0..MAX_RETRIES {
        let motion = MotionClass::ALL[rng.below(MotionClass::ALL.len())];
        let kind = ShapeKind::ALL[rng.below(ShapeKind::ALL.len())];
        let (size, speed) = match motion {
            MotionClass::Static => ((5 + rng.below(5)) as f64, 0.0),
            MotionClass::Grow => ((4 + rng.below(3)) as f64, rng.uniform_range(0.25, 0.4)),
            MotionClass::Shrink => ((12 + rng.below(5)) as f64, rng.uniform_range(0.25, 0.4)),
            _ => ((5 + rng.below(5)) as f64, rng.uniform_range(0.25, 1.0)),
        };
        let (dx, dy) = motion.direction();
        let travel_x = (dx * speed * span).abs();
        let travel_y = (dy * speed * span).abs();
        let grow = if motion == MotionClass::Grow { speed * span } else { 0.0 };
        let room_x = n - size - travel_x - grow;
        let room_y = n - size - travel_y - grow;
        if room_x < 1.0 || room_y < 1.0 {
            continue;
        }
        let mut x = rng.uniform_range(0.0, room_x - 1.0).floor() + grow / 2.0;
        let mut y = rng.uniform_range(0.0, room_y - 1.0).floor() + grow / 2.0;
        if dx < 0.0 {
            x += travel_x;
        }
        if dy < 0.0 {
            y += travel_y;
        }
        let mut spec = ShapeVideoSpec {
            kind,
            size,
            position: (x, y),
            motion,
            speed,
            intensity: rng.uniform_range(0.55, 1.0),
            background: rng.uniform_range(0.0, 0.3),
            distractors: Vec::new(),
        };
        if spec.validate(image_size, frames).is_err() {
            continue;
        }
        // The primary shape's whole trajectory, padded by one pixel, stays clear.
        let mut occupied = spec
            .swept_mask(image_size, frames)
            .union(&spec.shape_mask(0, image_size))?
            .dilate();
        let wanted = rng.below(3);
        let mut placed = 0;
        for _ in 0..MAX_RETRIES {
            if placed == wanted {
                break;
            }
            let s = 4 + rng.below(5);
            let px = rng.below(image_size - s + 1);
            let py = rng.below(image_size - s + 1);
            let d = StaticShape {
                kind: ShapeKind::ALL[rng.below(3)],
                size: s,
                position: (px, py),
                intensity: rng.uniform_range(0.55, 1.0),
            };
            let footprint = MotionMask::from_fn(image_size, image_size, Resolution::Pixel, |yy, xx| {
                xx >= px && yy >= py && xx < px + s && yy < py + s
            });
            if footprint.intersection_area(&occupied)? > 0 {
                continue;
            }
            occupied = occupied.union(&footprint.dilate())?;
            spec.distractors.push(d);
            placed += 1;
        }
        if placed == wanted {
            return Ok(spec);
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "no feasible spec for {image_size}px/{frames} frames after {MAX_RETRIES} attempts"
    )))
}

/// Generates `count` videos deterministically from `rng`; item `i` depends
/// only on the seed and `i`.
pub fn generate_dataset(count: usize, image_size: usize, source_frames: usize, rng: &Rng) -> Result<Vec<DatasetItem>> {
    if image_size % 2 != 0 || image_size == 0 {
        return Err(Error::NotDivisible { what: "image size", value: image_size, factor: 2 });
    }
    if source_frames < MIN_SOURCE_FRAMES {
        return Err(Error::TooFewFrames { what: "dataset video", need: MIN_SOURCE_FRAMES, got: source_frames });
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let spec = random_spec(image_size, source_frames, &mut r)?;
            let video = spec.render(image_size, source_frames)?;
            let gt_mask = spec.swept_mask(image_size, source_frames);
            Ok(DatasetItem { video, spec, gt_mask })
        })
        .collect()
}

/// Frames `o, o + stride, …` for a random valid offset `o`.
pub fn sample_clip(video: &VideoTensor, stride: usize, length: usize, rng: &mut Rng) -> Result<(VideoTensor, usize)> {
    if stride == 0 || length == 0 {
        return Err(Error::InvalidRange("stride and length must be >= 1".into()));
    }
    let need = (length - 1) * stride + 1;
    if need > video.frames() {
        return Err(Error::InsufficientFrames { length, stride, need, got: video.frames() });
    }
    let offset = rng.below(video.frames() - need + 1);
    Ok((clip_at(video, offset, stride, length), offset))
}

pub fn clip_at(video: &VideoTensor, offset: usize, stride: usize, length: usize) -> VideoTensor {
    let [_, c, h, w] = video.shape();
    let data = (0..length).flat_map(|k| video.frame(offset + k * stride).iter().copied()).collect();
    VideoTensor::from_vec([length, c, h, w], data).expect("length matches")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    video: String,
    mask: String,
    spec: ShapeVideoSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    image_size: usize,
    source_frames: usize,
    items: Vec<ManifestEntry>,
}

pub fn save_dataset(dir: impl AsRef<Path>, items: &[DatasetItem]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let first = items.first().ok_or(Error::Empty("dataset"))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let video = format!("item_{i:05}.video.aav");
        let mask = format!("item_{i:05}.mask.aav");
        save_video(dir.join(&video), &item.video)?;
        save_mask(dir.join(&mask), &item.gt_mask)?;
        entries.push(ManifestEntry { video, mask, spec: item.spec.clone() });
    }
    let manifest = Manifest {
        image_size: first.video.height(),
        source_frames: first.video.frames(),
        items: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    manifest
        .items
        .into_iter()
        .map(|e| {
            Ok(DatasetItem {
                video: load_video(dir.join(&e.video))?,
                gt_mask: load_mask(dir.join(&e.mask), Resolution::Pixel)?,
                spec: e.spec,
            })
        })
        .collect()
}
