use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::types::{sh_coeff_count, Camera, GaussianPrimitive, GaussianScene, ImageFrame, PipelineConfig};

/// An image with per-pixel metric depth and its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RGBDInput {
    pub image: ImageFrame,
    /// Row-major, one value per pixel.
    pub depth: Vec<f64>,
    pub camera: Camera,
}

impl RGBDInput {
    pub fn new(image: ImageFrame, depth: Vec<f64>, camera: Camera) -> Result<Self> {
        let input = Self { image, depth, camera };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.image.width(), self.image.height());
        if (w, h) != (self.camera.width, self.camera.height) {
            return Err(Error::shape(format!(
                "{w}x{h} image for a {}x{} camera",
                self.camera.width, self.camera.height
            )));
        }
        if self.depth.len() != w * h {
            return Err(Error::shape(format!("depth has {} values for {w}x{h} pixels", self.depth.len())));
        }
        let bad: Vec<(usize, usize)> = self
            .depth
            .iter()
            .enumerate()
            .filter(|(_, d)| !(d.is_finite() && **d > 0.0))
            .map(|(k, _)| (k % w, k / w))
            .collect();
        if !bad.is_empty() {
            let shown: Vec<String> = bad.iter().take(8).map(|(x, y)| format!("({x},{y})")).collect();
            let more = if bad.len() > 8 {
                format!(" and {} more", bad.len() - 8)
            } else {
                String::new()
            };
            return Err(Error::invalid(format!(
                "depth must be finite and positive; offending pixels {}{more}",
                shown.join(" ")
            )));
        }
        Ok(())
    }
}

/// One isotropic Gaussian per sampled pixel, unprojected to its depth.
pub fn init_scene_from_rgbd(input: &RGBDInput, cfg: &PipelineConfig) -> Result<GaussianScene> {
    input.validate()?;
    let stride = cfg.init_stride.max(1);
    let cam = &input.camera;
    let (w, h) = (input.image.width(), input.image.height());
    let extra = sh_coeff_count(cfg.sh_degree) - 1;
    let mut prims = Vec::with_capacity(w.div_ceil(stride) * h.div_ceil(stride));
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            let d = input.depth[y * w + x];
            let local = Vector3::new(d * (x as f64 - cam.cx) / cam.fx, d * (y as f64 - cam.cy) / cam.fy, d);
            let scale = d * stride as f64 / cam.fx;
            let mut p = GaussianPrimitive::isotropic(
                cam.camera_to_world(&local),
                scale,
                cfg.init_opacity,
                input.image.pixel(x, y),
            )?;
            p.sh.extend(std::iter::repeat_n([0.0; 3], extra));
            prims.push(p);
        }
    }
    Ok(GaussianScene::from_primitives(cfg.sh_degree, prims))
}
