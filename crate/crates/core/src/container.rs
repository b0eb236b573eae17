//! The `AAV1` tensor container and the multi-tensor checkpoint archive.
//!
//! Tensor layout: magic `AAV1`, `u8` dtype tag, `u8` rank, `rank × u32`
//! little-endian dims, then the row-major little-endian payload. Dtype 0 is
//! `f32` (videos, latents, masks); dtype 1 is `f64`, used for checkpoint
//! parameters so a save/load round trip is lossless.
//!
//! Archive layout: `u32` JSON header length, UTF-8 JSON header, `u32` tensor
//! count, then per tensor a `u16` name length, the name bytes and one AAV1
//! tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{MotionMask, Resolution};
use crate::tensor::VideoTensor;

pub const MAGIC: &[u8; 4] = b"AAV1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }
}

/// A tensor as stored on disk: dims plus values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

impl From<&VideoTensor> for RawTensor {
    fn from(v: &VideoTensor) -> Self {
        RawTensor {
            dims: v.shape().to_vec(),
            data: v.data().to_vec(),
        }
    }
}

impl TryFrom<RawTensor> for VideoTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        let dims: [usize; 4] = raw
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("expected rank-4 video, got rank {}", raw.dims.len())))?;
        VideoTensor::from_vec(dims, raw.data)
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_tensor(w: &mut impl Write, t: &RawTensor, dtype: DType) -> Result<()> {
    if t.dims.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} too large", t.dims.len())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[dtype as u8, t.dims.len() as u8])?;
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for &v in &t.data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<RawTensor> {
    let magic: [u8; 4] = read_exact(r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let [tag, rank] = read_exact::<2>(r)?;
    let dtype = DType::from_tag(tag)?;
    let dims = (0..rank)
        .map(|_| Ok(u32::from_le_bytes(read_exact(r)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)?;
    let data = match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(RawTensor { dims, data })
}

pub fn video_to_bytes(v: &VideoTensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, &v.into(), DType::F32).expect("writing to a Vec cannot fail");
    out
}

pub fn video_from_bytes(mut bytes: &[u8]) -> Result<VideoTensor> {
    read_tensor(&mut bytes)?.try_into()
}

pub fn save_video(path: impl AsRef<Path>, v: &VideoTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, &v.into(), DType::F32)?;
    w.flush()?;
    Ok(())
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))?.try_into()
}

/// Masks are stored as rank-2 `f32` tensors of 0/1.
pub fn save_mask(path: impl AsRef<Path>, m: &MotionMask) -> Result<()> {
    let raw = RawTensor::new(vec![m.height(), m.width()], m.to_f64())?;
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, &raw, DType::F32)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>, resolution: Resolution) -> Result<MotionMask> {
    let raw = read_tensor(&mut BufReader::new(File::open(path)?))?;
    let [h, w]: [usize; 2] = raw
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("expected rank-2 mask, got rank {}", raw.dims.len())))?;
    MotionMask::from_values(h, w, &raw.data, resolution)
}

pub fn write_archive(w: &mut impl Write, header: &str, tensors: &[(String, RawTensor)]) -> Result<()> {
    let len = u32::try_from(header.len()).map_err(|_| Error::Format("header too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let nlen = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        w.write_all(&nlen.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t, DType::F64)?;
    }
    Ok(())
}

pub fn read_archive(r: &mut impl Read) -> Result<(String, Vec<(String, RawTensor)>)> {
    let len = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header = String::from_utf8(header).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let count = u32::from_le_bytes(read_exact(r)?);
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(read_exact(r)?) as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?;
        tensors.push((name, read_tensor(r)?));
    }
    Ok((header, tensors))
}
