use crate::error::{Error, Result};

/// Dense rank-4 video, laid out frame-major as `(frames, channels, height, width)`.
///
/// Used both for pixel videos (values in `[0, 1]`) and for latents
/// (unconstrained). A single image is a one-frame video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self::filled([frames, channels, height, width], 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d >= 1), "every dimension must be >= 1, got {shape:?}");
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(frame, channel, y, x)` at every index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut out = Self::filled(shape, 0.0);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for fi in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.data[i] = f(fi, ci, y, x);
                        i += 1;
                    }
                }
            }
        }
        out
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn frames(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Number of values in one frame (`channels * height * width`).
    pub fn frame_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn index(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, h, w] = self.shape;
        ((f * cs + c) * h + y) * w + x
    }

    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(f, c, y, x)]
    }

    pub fn set(&mut self, f: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(f, c, y, x);
        self.data[i] = v;
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let len = self.frame_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.frame_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Copies frame `i` out as a one-frame video.
    pub fn frame_tensor(&self, i: usize) -> VideoTensor {
        let [_, c, h, w] = self.shape;
        VideoTensor {
            shape: [1, c, h, w],
            data: self.frame(i).to_vec(),
        }
    }

    /// Frames `start..start + count` as a new video.
    pub fn frame_range(&self, start: usize, count: usize) -> VideoTensor {
        let [_, c, h, w] = self.shape;
        let len = self.frame_len();
        VideoTensor {
            shape: [count, c, h, w],
            data: self.data[start * len..(start + count) * len].to_vec(),
        }
    }

    /// Repeats a one-frame video `n` times along the frame axis.
    pub fn repeat_frame(&self, n: usize) -> Result<VideoTensor> {
        if self.frames() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "repeat_frame needs a single frame, got {}",
                self.frames()
            )));
        }
        let [_, c, h, w] = self.shape;
        Ok(VideoTensor {
            shape: [n, c, h, w],
            data: self.data.repeat(n),
        })
    }

    /// Concatenates two videos along the frame axis.
    pub fn concat_frames(&self, other: &VideoTensor) -> Result<VideoTensor> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate {:?} with {:?} along frames",
                self.shape, other.shape
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(VideoTensor {
            shape: [self.shape[0] + other.shape[0], self.shape[1], self.shape[2], self.shape[3]],
            data,
        })
    }

    pub fn ensure_same_shape(&self, other: &VideoTensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> VideoTensor {
        VideoTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &VideoTensor, f: impl Fn(f64, f64) -> f64) -> Result<VideoTensor> {
        self.ensure_same_shape(other, "elementwise op")?;
        Ok(VideoTensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &VideoTensor) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_pixel_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp_pixels(&self) -> VideoTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}
