//! Motion-area masks: frame differencing, hole filling, latent
//! downsampling and the non-movable-area freeze.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

/// Foreground components smaller than this many pixels are discarded before
/// hole filling.
pub const MIN_COMPONENT_AREA: usize = 4;

/// Paper-scale threshold of 5 grey levels expressed in `[0, 1]` units.
pub const DEFAULT_THRESHOLD: f64 = 5.0 / 255.0;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Pixel,
    Latent,
}

/// Binary `(height, width)` map; `true` marks movable positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
    resolution: Resolution,
}

impl MotionMask {
    pub fn zeros(height: usize, width: usize, resolution: Resolution) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
            resolution,
        }
    }

    pub fn ones(height: usize, width: usize, resolution: Resolution) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
            resolution,
        }
    }

    pub fn from_fn(height: usize, width: usize, resolution: Resolution, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data, resolution }
    }

    pub fn from_bools(height: usize, width: usize, data: Vec<bool>, resolution: Resolution) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data, resolution })
    }

    /// Accepts 0/1 reals; any value `>= 0.5` counts as movable.
    pub fn from_values(height: usize, width: usize, values: &[f64], resolution: Resolution) -> Result<Self> {
        Self::from_bools(height, width, values.iter().map(|&v| v >= 0.5).collect(), resolution)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn same_shape(&self, other: &MotionMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn union(&self, other: &MotionMask) -> Result<MotionMask> {
        self.check_shape(other)?;
        Ok(MotionMask {
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
            ..self.clone()
        })
    }

    pub fn intersection_area(&self, other: &MotionMask) -> Result<usize> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count())
    }

    /// Intersection over union; two empty masks count as a perfect match.
    pub fn iou(&self, other: &MotionMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.union(other)?.area();
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }

    /// True when every movable position of `self` is movable in `other`.
    pub fn is_subset_of(&self, other: &MotionMask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Nearest-neighbour upsampling by `factor` (latent → pixel).
    pub fn upsample(&self, factor: usize) -> MotionMask {
        MotionMask::from_fn(self.height * factor, self.width * factor, Resolution::Pixel, |y, x| {
            self.get(y / factor, x / factor)
        })
    }

    /// 8-neighbourhood dilation by one pixel.
    pub fn dilate(&self) -> MotionMask {
        MotionMask::from_fn(self.height, self.width, self.resolution, |y, x| {
            neighbours8(y, x, self.height, self.width).any(|(ny, nx)| self.get(ny, nx)) || self.get(y, x)
        })
    }

    fn check_shape(&self, other: &MotionMask) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

fn neighbours8(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy != 0 || dx != 0)
        .filter_map(move |(dy, dx)| {
            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
            (ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64).then_some((ny as usize, nx as usize))
        })
}

fn neighbours4(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dy, dx)| {
        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
        (ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64).then_some((ny as usize, nx as usize))
    })
}

/// Luma conversion; single-channel input passes through unchanged.
pub fn to_grayscale(video: &VideoTensor) -> Result<VideoTensor> {
    let [n, c, h, w] = video.shape();
    match c {
        1 => Ok(video.clone()),
        3 => Ok(VideoTensor::from_fn([n, 1, h, w], |f, _, y, x| {
            LUMA.iter().enumerate().map(|(ch, k)| k * video.get(f, ch, y, x)).sum()
        })),
        other => Err(Error::UnsupportedChannels(other)),
    }
}

/// Union over consecutive frame pairs of `|gray^i − gray^{i−1}| > threshold`.
pub fn frame_diff_mask(gray: &VideoTensor, threshold: f64) -> Result<MotionMask> {
    let [n, c, h, w] = gray.shape();
    if n < 2 {
        return Err(Error::TooFewFrames { what: "frame difference mask", need: 2, got: n });
    }
    if c != 1 {
        return Err(Error::UnsupportedChannels(c));
    }
    let mut mask = MotionMask::zeros(h, w, Resolution::Pixel);
    for i in 1..n {
        let (prev, cur) = (gray.frame(i - 1), gray.frame(i));
        for (m, (a, b)) in mask.data.iter_mut().zip(prev.iter().zip(cur)) {
            *m |= (b - a).abs() > threshold;
        }
    }
    Ok(mask)
}

/// Drops tiny 8-connected components, then fills every background pixel
/// not 4-connected to the image border.
pub fn fill_contours(d: &MotionMask) -> MotionMask {
    let (h, w) = (d.height, d.width);
    let mut kept = d.clone();
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !d.data[start] || seen[start] {
            continue;
        }
        let mut component = vec![start];
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for (ny, nx) in neighbours8(i / w, i % w, h, w) {
                let j = ny * w + nx;
                if d.data[j] && !seen[j] {
                    seen[j] = true;
                    component.push(j);
                    queue.push_back(j);
                }
            }
        }
        if component.len() < MIN_COMPONENT_AREA {
            for i in component {
                kept.data[i] = false;
            }
        }
    }

    let mut outside = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            if border && !kept.data[i] && !outside[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        for (ny, nx) in neighbours4(i / w, i % w, h, w) {
            let j = ny * w + nx;
            if !kept.data[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    MotionMask {
        data: outside.iter().map(|&o| !o).collect(),
        ..kept
    }
}

/// Grayscale → frame-difference mask → filled contours.
pub fn synthesize_mask(video: &VideoTensor, threshold: f64) -> Result<MotionMask> {
    Ok(fill_contours(&frame_diff_mask(&to_grayscale(video)?, threshold)?))
}

/// Max-pools a pixel mask to latent resolution.
pub fn downsample_mask(m: &MotionMask, factor: usize) -> Result<MotionMask> {
    if factor == 0 || m.height % factor != 0 {
        return Err(Error::NotDivisible { what: "mask height", value: m.height, factor });
    }
    if m.width % factor != 0 {
        return Err(Error::NotDivisible { what: "mask width", value: m.width, factor });
    }
    Ok(MotionMask::from_fn(m.height / factor, m.width / factor, Resolution::Latent, |y, x| {
        (0..factor).any(|dy| (0..factor).any(|dx| m.get(y * factor + dy, x * factor + dx)))
    }))
}

/// Resets every non-movable position of every frame to its frame-0 value.
pub fn freeze_latent(z0: &VideoTensor, m: &MotionMask) -> Result<VideoTensor> {
    let [n, c, h, w] = z0.shape();
    if m.height != h || m.width != w {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs latent {h}x{w}",
            m.height, m.width
        )));
    }
    let mut out = z0.clone();
    let plane = h * w;
    let first = z0.frame(0).to_vec();
    for f in 1..n {
        let frame = out.frame_mut(f);
        for ch in 0..c {
            for (p, &movable) in m.data.iter().enumerate() {
                if !movable {
                    frame[ch * plane + p] = first[ch * plane + p];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(frames: &[&[f64]], h: usize, w: usize) -> VideoTensor {
        let data = frames.iter().flat_map(|f| f.iter().copied()).collect();
        VideoTensor::from_vec([frames.len(), 1, h, w], data).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        let white = VideoTensor::filled([1, 3, 1, 1], 1.0);
        assert!((to_grayscale(&white).unwrap().data()[0] - 1.0).abs() < 1e-15);
        let red = VideoTensor::from_vec([1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_grayscale(&red).unwrap().data(), &[0.299]);
        let mono = VideoTensor::from_fn([2, 1, 2, 2], |f, _, y, x| (f + y + x) as f64 * 0.1);
        assert_eq!(to_grayscale(&mono).unwrap(), mono);
        assert!(matches!(
            to_grayscale(&VideoTensor::zeros(1, 2, 1, 1)),
            Err(Error::UnsupportedChannels(2))
        ));
    }

    #[test]
    fn diff_mask_cases() {
        let still = VideoTensor::filled([3, 1, 4, 4], 0.4);
        assert!(frame_diff_mask(&still, DEFAULT_THRESHOLD).unwrap().is_empty());

        let mut b = vec![0.5; 4];
        b[2] += 10.0 / 255.0;
        let v = gray(&[&[0.5; 4], &b], 2, 2);
        let m = frame_diff_mask(&v, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(m.as_slice(), &[false, false, true, false]);

        let extreme = gray(&[&[0.0, 1.0], &[1.0, 0.0]], 1, 2);
        assert!(frame_diff_mask(&extreme, 1.0).unwrap().is_empty());

        assert!(matches!(
            frame_diff_mask(&VideoTensor::zeros(1, 1, 2, 2), 0.1),
            Err(Error::TooFewFrames { .. })
        ));
    }

    #[test]
    fn fill_trivial_cases() {
        let empty = MotionMask::zeros(5, 5, Resolution::Pixel);
        assert_eq!(fill_contours(&empty), empty);
        let full = MotionMask::ones(5, 5, Resolution::Pixel);
        assert_eq!(fill_contours(&full), full);
    }

    #[test]
    fn hollow_ring_is_filled() {
        let ring = MotionMask::from_fn(12, 12, Resolution::Pixel, |y, x| {
            (2..10).contains(&y) && (2..10).contains(&x) && (y == 2 || y == 9 || x == 2 || x == 9)
        });
        let square = MotionMask::from_fn(12, 12, Resolution::Pixel, |y, x| (2..10).contains(&y) && (2..10).contains(&x));
        assert_eq!(fill_contours(&ring), square);
    }

    #[test]
    fn small_components_dropped() {
        let mut m = MotionMask::zeros(8, 8, Resolution::Pixel);
        m.set(1, 1, true);
        m.set(2, 2, true); // diagonal neighbour: one component of area 2
        for x in 4..8 {
            m.set(6, x, true);
        }
        let out = fill_contours(&m);
        assert!(!out.get(1, 1) && !out.get(2, 2));
        assert_eq!(out.area(), 4);
    }

    #[test]
    fn downsample_cases() {
        let z = MotionMask::zeros(4, 4, Resolution::Pixel);
        assert!(downsample_mask(&z, 2).unwrap().is_empty());
        let mut one = z.clone();
        one.set(3, 2, true);
        let d = downsample_mask(&one, 2).unwrap();
        assert_eq!(d.as_slice(), &[false, false, false, true]);
        assert_eq!(d.resolution(), Resolution::Latent);
        let checker = MotionMask::from_fn(4, 4, Resolution::Pixel, |y, x| (x + y) % 2 == 0);
        assert_eq!(downsample_mask(&checker, 2).unwrap().area(), 4);
        assert!(downsample_mask(&MotionMask::zeros(3, 4, Resolution::Pixel), 2).is_err());
    }

    #[test]
    fn freeze_cases() {
        let z = VideoTensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = MotionMask::from_bools(1, 2, vec![true, false], Resolution::Latent).unwrap();
        let out = freeze_latent(&z, &m).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(freeze_latent(&out, &m).unwrap(), out);

        assert_eq!(freeze_latent(&z, &MotionMask::ones(1, 2, Resolution::Latent)).unwrap(), z);
        let frozen = freeze_latent(&z, &MotionMask::zeros(1, 2, Resolution::Latent)).unwrap();
        assert_eq!(frozen.frame(1), frozen.frame(0));
        assert!(freeze_latent(&z, &MotionMask::ones(2, 2, Resolution::Latent)).is_err());
    }
}
