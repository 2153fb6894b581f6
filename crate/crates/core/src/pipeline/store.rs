use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::types::{Camera, ImageFrame, VideoClip};

/// Where a stored frame came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Input,
    /// Produced by the enhancement of window `s`.
    Generated(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Input => write!(f, "input"),
            Provenance::Generated(s) => write!(f, "generated-window-{s}"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "input" {
            return Ok(Provenance::Input);
        }
        s.strip_prefix("generated-window-")
            .and_then(|w| w.parse().ok())
            .map(Provenance::Generated)
            .ok_or_else(|| Error::parse("provenance", format!("unknown tag {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredFrame {
    pub image: ImageFrame,
    pub camera: Camera,
    pub provenance: Provenance,
}

/// The evolving supervision set, keyed by global frame index.
///
/// Index 0 holds the input image and can be neither replaced nor removed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStore {
    frames: BTreeMap<usize, StoredFrame>,
}

impl FrameStore {
    pub fn new(input: ImageFrame, camera: Camera) -> Result<Self> {
        check_frame(&input, &camera)?;
        let mut frames = BTreeMap::new();
        frames.insert(
            0,
            StoredFrame {
                image: input,
                camera,
                provenance: Provenance::Input,
            },
        );
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false: the input frame is permanent.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.keys().copied()
    }

    pub fn get(&self, index: usize) -> Option<&StoredFrame> {
        self.frames.get(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &StoredFrame)> + '_ {
        self.frames.iter().map(|(i, f)| (*i, f))
    }

    pub fn input(&self) -> &StoredFrame {
        &self.frames[&0]
    }

    /// Inserts or replaces a generated frame.
    pub fn insert(&mut self, index: usize, image: ImageFrame, camera: Camera, provenance: Provenance) -> Result<()> {
        if index == 0 || provenance == Provenance::Input {
            return Err(Error::Contract("the input frame at index 0 is fixed".into()));
        }
        check_frame(&image, &camera)?;
        if !image.same_shape(&self.input().image) {
            return Err(Error::shape(format!("frame {index} differs in resolution from the input")));
        }
        self.frames.insert(
            index,
            StoredFrame {
                image,
                camera,
                provenance,
            },
        );
        Ok(())
    }

    pub fn remove(&mut self, index: usize) -> Result<Option<StoredFrame>> {
        if index == 0 {
            return Err(Error::Contract("the input frame at index 0 cannot be removed".into()));
        }
        Ok(self.frames.remove(&index))
    }

    /// All frames in index order with their cameras.
    pub fn supervision(&self) -> Result<(VideoClip, Vec<Camera>)> {
        let clip = VideoClip::new(
            self.frames.values().map(|f| f.image.clone()).collect(),
            self.frames.keys().copied().collect(),
        )?;
        Ok((clip, self.frames.values().map(|f| f.camera.clone()).collect()))
    }
}

fn check_frame(image: &ImageFrame, camera: &Camera) -> Result<()> {
    if (image.width(), image.height()) != (camera.width, camera.height) {
        return Err(Error::shape(format!(
            "{}x{} frame for a {}x{} camera",
            image.width(),
            image.height(),
            camera.width,
            camera.height
        )));
    }
    Ok(())
}
