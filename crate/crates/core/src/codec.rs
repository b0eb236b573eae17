//! Fixed latent codec: 2×2 average pooling down, nearest-neighbour up.

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const LATENT_FACTOR: usize = 2;

/// Pixels → latent by non-overlapping 2×2 mean per frame and channel.
pub fn encode_image(pixels: &VideoTensor) -> Result<VideoTensor> {
    let [n, c, h, w] = pixels.shape();
    if h % LATENT_FACTOR != 0 {
        return Err(Error::NotDivisible { what: "height", value: h, factor: LATENT_FACTOR });
    }
    if w % LATENT_FACTOR != 0 {
        return Err(Error::NotDivisible { what: "width", value: w, factor: LATENT_FACTOR });
    }
    let (lh, lw) = (h / 2, w / 2);
    Ok(VideoTensor::from_fn([n, c, lh, lw], |f, ch, y, x| {
        let (py, px) = (2 * y, 2 * x);
        (pixels.get(f, ch, py, px)
            + pixels.get(f, ch, py, px + 1)
            + pixels.get(f, ch, py + 1, px)
            + pixels.get(f, ch, py + 1, px + 1))
            * 0.25
    }))
}

/// Latent → pixels by 2× nearest-neighbour upsampling.
pub fn decode_latent(latent: &VideoTensor) -> VideoTensor {
    let [n, c, h, w] = latent.shape();
    VideoTensor::from_fn([n, c, h * 2, w * 2], |f, ch, y, x| latent.get(f, ch, y / 2, x / 2))
}
