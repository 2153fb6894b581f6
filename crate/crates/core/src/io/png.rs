//! 8-bit PNG frames.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::ImageFrame;

pub fn frame_to_rgb8(frame: &ImageFrame) -> RgbImage {
    let w = frame.width() as u32;
    let h = frame.height() as u32;
    let data = frame.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w, h, data).expect("buffer sized from frame")
}

pub fn rgb8_to_frame(img: &RgbImage) -> Result<ImageFrame> {
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    ImageFrame::new(img.width() as usize, img.height() as usize, data)
}

pub fn write_png(path: &Path, frame: &ImageFrame) -> Result<()> {
    frame_to_rgb8(frame).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_png(path: &Path) -> Result<ImageFrame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    rgb8_to_frame(&img.to_rgb8())
}

/// Writes a single-channel map as a grayscale-in-RGB PNG, mapping `[0, 1]` to `[0, 255]`.
pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let data = values.iter().flat_map(|&v| [v.clamp(0.0, 1.0); 3]).collect();
    write_png(path, &ImageFrame::new(width, height, data)?)
}
