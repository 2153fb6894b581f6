use crate::error::{Error, Result};

/// An `H x W x 3` RGB image with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image must be at least 1x1, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height}x3 image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::invalid(format!(
                "pixel value {} at flat index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a frame after clamping every value into `[0, 1]`; NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &ImageFrame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &ImageFrame) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

/// Frames rendered or generated along a trajectory, tagged with their global indices.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Vec<ImageFrame>,
    frame_indices: Vec<usize>,
}

impl VideoClip {
    pub fn new(frames: Vec<ImageFrame>, frame_indices: Vec<usize>) -> Result<Self> {
        if frames.len() != frame_indices.len() {
            return Err(Error::shape(format!(
                "{} frames but {} indices",
                frames.len(),
                frame_indices.len()
            )));
        }
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| !f.same_shape(first)) {
                return Err(Error::shape("clip frames differ in shape"));
            }
        }
        if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("frame indices must be strictly increasing"));
        }
        Ok(Self { frames, frame_indices })
    }

    /// Clip with indices `1..=frames.len()`.
    pub fn sequential(frames: Vec<ImageFrame>) -> Result<Self> {
        let n = frames.len();
        Self::new(frames, (1..=n).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[ImageFrame] {
        &self.frames
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn into_frames(self) -> Vec<ImageFrame> {
        self.frames
    }

    /// `(width, height)` of the frames, if any.
    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width(), f.height()))
    }
}
