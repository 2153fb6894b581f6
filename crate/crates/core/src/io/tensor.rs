//! Flat binary tensor files.
//!
//! Layout: a 16-byte header (`b"SSTF"`, `u8` rank, `u8` dtype tag, ten zero
//! bytes), then `rank` little-endian `u64` dims, then the row-major
//! little-endian payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ImageFrame, VideoClip};

pub const MAGIC: &[u8; 4] = b"SSTF";
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape("tensor element count overflows"))?;
        if expected != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {expected} values, got {}", data.len())));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::shape(format!("rank {} too large", dims.len())));
        }
        Ok(Self { dims, data })
    }
}

pub fn encode_tensor(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.dims.len() + dtype.size() * t.data.len());
    out.extend_from_slice(MAGIC);
    out.push(t.dims.len() as u8);
    out.push(dtype.tag());
    out.resize(HEADER_LEN, 0);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => t.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse("header", format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected SSTF"));
    }
    let rank = bytes[4] as usize;
    let dtype = DType::from_tag(bytes[5]).ok_or_else(|| Error::parse("byte 5", format!("unknown dtype tag {}", bytes[5])))?;
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::parse("dims", format!("truncated: need {dims_end} bytes for {rank} dims")));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .map(|d| usize::try_from(d).map_err(|_| Error::parse("dims", format!("dimension {d} does not fit in memory"))))
        .collect::<Result<_>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse("dims", "element count overflows"))?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::parse("dims", "payload size overflows"))?;
    if payload.len() != expected {
        return Err(Error::parse(
            format!("byte {dims_end}"),
            format!("payload has {} bytes, dims {dims:?} need {expected}", payload.len()),
        ));
    }
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    std::fs::write(path, encode_tensor(t, dtype)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_tensor(&bytes)
}

pub fn frame_to_tensor(frame: &ImageFrame) -> Tensor {
    Tensor {
        dims: vec![frame.height(), frame.width(), 3],
        data: frame.data().to_vec(),
    }
}

pub fn tensor_to_frame(t: &Tensor) -> Result<ImageFrame> {
    match t.dims[..] {
        [h, w, 3] => ImageFrame::new(w, h, t.data.clone()),
        _ => Err(Error::shape(format!("expected H x W x 3 image tensor, got {:?}", t.dims))),
    }
}

pub fn clip_to_tensor(clip: &VideoClip) -> Tensor {
    let (w, h) = clip.resolution().unwrap_or((0, 0));
    Tensor {
        dims: vec![clip.len(), h, w, 3],
        data: clip.frames().iter().flat_map(|f| f.data().iter().copied()).collect(),
    }
}

/// Splits an `N x H x W x 3` tensor into frames labelled `1..=N`.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<ImageFrame>> {
    match t.dims[..] {
        [n, h, w, 3] => {
            let per = h * w * 3;
            (0..n)
                .map(|i| ImageFrame::new(w, h, t.data[i * per..(i + 1) * per].to_vec()))
                .collect()
        }
        _ => Err(Error::shape(format!("expected N x H x W x 3 clip tensor, got {:?}", t.dims))),
    }
}
