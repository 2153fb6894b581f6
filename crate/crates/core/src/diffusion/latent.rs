use crate::error::{Error, Result};
use crate::types::{ImageFrame, VideoClip};

/// A stack of latent grids, one `h x w x c` grid per frame, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    height: usize,
    width: usize,
    channels: usize,
    /// Pixel-to-latent downsample factor of the codec that produced it.
    factor: usize,
    frame_indices: Vec<usize>,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        factor: usize,
        frame_indices: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || factor == 0 {
            return Err(Error::shape(format!(
                "latent grid {height}x{width}x{channels} (factor {factor}) has a zero dimension"
            )));
        }
        let expected = frame_indices.len() * height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "latent data has {} values, expected {expected}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent value {k} is {}", data[k])));
        }
        Ok(Self {
            height,
            width,
            channels,
            factor,
            frame_indices,
            data,
        })
    }

    /// Same shape and frame indices as `self`, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.factor,
            self.frame_indices.clone(),
            data,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn frames(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// The `C`-vector at location `j` (row-major over the grid) of frame `i`.
    pub fn vector(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.locations() + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Frames `range` as a new latent video.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> Self {
        let n = self.frame_len();
        Self {
            frame_indices: self.frame_indices[range.clone()].to_vec(),
            data: self.data[range.start * n..range.end * n].to_vec(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &LatentVideo) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.frames() == other.frames()
    }

    pub(crate) fn check_same_shape(&self, other: &LatentVideo, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{}x{} vs {}x{}x{}x{}",
                self.frames(),
                self.height,
                self.width,
                self.channels,
                other.frames(),
                other.height,
                other.width,
                other.channels
            )))
        }
    }
}

/// Maps RGB clips to latent videos and back.
pub trait LatentCodec: Send + Sync {
    /// Spatial downsample factor.
    fn factor(&self) -> usize;
    fn channels(&self) -> usize;
    fn encode(&self, clip: &VideoClip) -> Result<LatentVideo>;
    /// Decoded values are clamped into `[0, 1]`.
    fn decode(&self, latents: &LatentVideo) -> Result<VideoClip>;

    fn encode_frame(&self, frame: &ImageFrame, index: usize) -> Result<LatentVideo> {
        self.encode(&VideoClip::new(vec![frame.clone()], vec![index])?)
    }
}

/// `x -> 2x - 1` per channel, full resolution.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

/// Folds each `f x f` pixel block into one latent vector of `3 f^2` channels.
///
/// Channel order within a block is `(dy, dx, rgb)`. Values are mapped to
/// `[-1, 1]` the same way as [`IdentityCodec`], so `f = 1` is the identity codec.
#[derive(Clone, Copy, Debug)]
pub struct PatchCodec {
    factor: usize,
}

impl PatchCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("patch factor must be >= 1"));
        }
        Ok(Self { factor })
    }
}

fn fold(clip: &VideoClip, f: usize) -> Result<LatentVideo> {
    let (w, h) = clip
        .resolution()
        .ok_or_else(|| Error::invalid("cannot encode an empty clip"))?;
    if w % f != 0 || h % f != 0 {
        return Err(Error::invalid(format!(
            "frame size {w}x{h} not divisible by patch factor {f}"
        )));
    }
    let (lh, lw, c) = (h / f, w / f, 3 * f * f);
    let mut data = Vec::with_capacity(clip.len() * lh * lw * c);
    for frame in clip.frames() {
        let px = frame.data();
        for by in 0..lh {
            for bx in 0..lw {
                for dy in 0..f {
                    for dx in 0..f {
                        let p = ((by * f + dy) * w + bx * f + dx) * 3;
                        data.extend(px[p..p + 3].iter().map(|v| 2.0 * v - 1.0));
                    }
                }
            }
        }
    }
    LatentVideo::new(lh, lw, c, f, clip.frame_indices().to_vec(), data)
}

fn unfold(latents: &LatentVideo, f: usize) -> Result<VideoClip> {
    if latents.factor() != f || latents.channels() != 3 * f * f {
        return Err(Error::shape(format!(
            "codec with factor {f} cannot decode latents with factor {} and {} channels",
            latents.factor(),
            latents.channels()
        )));
    }
    let (lh, lw) = (latents.height(), latents.width());
    let (h, w) = (lh * f, lw * f);
    let mut frames = Vec::with_capacity(latents.frames());
    for i in 0..latents.frames() {
        let mut px = vec![0.0; h * w * 3];
        for by in 0..lh {
            for bx in 0..lw {
                let v = latents.vector(i, by * lw + bx);
                for dy in 0..f {
                    for dx in 0..f {
                        let p = ((by * f + dy) * w + bx * f + dx) * 3;
                        let q = (dy * f + dx) * 3;
                        for ch in 0..3 {
                            px[p + ch] = (v[q + ch] + 1.0) / 2.0;
                        }
                    }
                }
            }
        }
        frames.push(ImageFrame::from_clamped(w, h, px)?);
    }
    VideoClip::new(frames, latents.frame_indices().to_vec())
}

impl LatentCodec for IdentityCodec {
    fn factor(&self) -> usize {
        1
    }

    fn channels(&self) -> usize {
        3
    }

    fn encode(&self, clip: &VideoClip) -> Result<LatentVideo> {
        fold(clip, 1)
    }

    fn decode(&self, latents: &LatentVideo) -> Result<VideoClip> {
        unfold(latents, 1)
    }
}

impl LatentCodec for PatchCodec {
    fn factor(&self) -> usize {
        self.factor
    }

    fn channels(&self) -> usize {
        3 * self.factor * self.factor
    }

    fn encode(&self, clip: &VideoClip) -> Result<LatentVideo> {
        fold(clip, self.factor)
    }

    fn decode(&self, latents: &LatentVideo) -> Result<VideoClip> {
        unfold(latents, self.factor)
    }
}
