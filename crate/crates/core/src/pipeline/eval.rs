use crate::error::{Error, Result};
use crate::optimize::{psnr, ssim};
use crate::render::render_color;
use crate::types::{Camera, GaussianScene, VideoClip};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub frame_index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    /// Infinite when any frame matches exactly.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalTable {
    /// One row per frame plus a trailing `mean` row. Identical frames print `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.frame_index, r.psnr, r.ssim));
        }
        out.push_str(&format!("mean,{},{}\n", self.mean_psnr, self.mean_ssim));
        out
    }
}

/// PSNR and SSIM of the scene's renders against held-out frames.
pub fn evaluate(scene: &GaussianScene, heldout: &VideoClip, cameras: &[Camera], background: [f64; 3]) -> Result<EvalTable> {
    if heldout.len() != cameras.len() || cameras.is_empty() {
        return Err(Error::invalid(format!(
            "{} held-out frames for {} cameras",
            heldout.len(),
            cameras.len()
        )));
    }
    let mut rows = Vec::with_capacity(cameras.len());
    for ((frame, cam), &index) in heldout.frames().iter().zip(cameras).zip(heldout.frame_indices()) {
        let render = render_color(scene, cam, background)?;
        rows.push(EvalRow {
            frame_index: index,
            psnr: psnr(&render, frame)?,
            ssim: ssim(&render, frame)?,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalTable {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}
