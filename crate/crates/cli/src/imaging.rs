//! PNG and base64 exchange formats used by the HTTP API.

use std::io::Cursor;

use animate_core::mask::LUMA;
use animate_core::{MotionMask, Resolution, VideoTensor};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("invalid PNG: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("PNG encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported PNG layout: {0}")]
    Unsupported(String),
}

/// Decodes any PNG to 8-bit luma rows. Returns `(height, width, luma)`.
pub fn decode_luma(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut luma = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * channels].chunks_exact(channels) {
            let v = match channels {
                1 | 2 => px[0],
                _ => (LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64).round() as u8,
            };
            luma.push(v);
        }
    }
    Ok((h, w, luma))
}

/// Grayscale image as a single-frame tensor with values `v / 255`.
pub fn image_from_png(bytes: &[u8]) -> Result<VideoTensor, ImageError> {
    let (h, w, luma) = decode_luma(bytes)?;
    VideoTensor::from_vec([1, 1, h, w], luma.iter().map(|&v| v as f64 / 255.0).collect())
        .map_err(|e| ImageError::Unsupported(e.to_string()))
}

/// Pixel mask where luma ≥ 128 is movable.
pub fn mask_from_png(bytes: &[u8]) -> Result<MotionMask, ImageError> {
    let (h, w, luma) = decode_luma(bytes)?;
    Ok(MotionMask::from_bools(h, w, luma.iter().map(|&v| v >= 128).collect(), Resolution::Pixel)
        .map_err(|e| ImageError::Unsupported(e.to_string()))?)
}

fn encode_gray(h: usize, w: usize, pixels: &[u8]) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One 8-bit grayscale PNG for frame `f` (channel 0).
pub fn frame_to_png(video: &VideoTensor, f: usize) -> Result<Vec<u8>, ImageError> {
    let (h, w) = (video.height(), video.width());
    let pixels: Vec<u8> = video.frame(f)[..h * w].iter().map(|&v| quantize(v)).collect();
    encode_gray(h, w, &pixels)
}

pub fn mask_to_png(mask: &MotionMask) -> Result<Vec<u8>, ImageError> {
    let pixels: Vec<u8> = mask.as_slice().iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_gray(mask.height(), mask.width(), &pixels)
}

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

/// Accepts plain base64 or a `data:...;base64,` URL.
pub fn b64_decode(s: &str) -> Result<Vec<u8>, ImageError> {
    let payload = match s.find("base64,") {
        Some(i) if s.starts_with("data:") => &s[i + 7..],
        _ => s,
    };
    Ok(STANDARD.decode(payload.trim())?)
}
