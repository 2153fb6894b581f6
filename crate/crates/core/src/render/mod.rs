//! Differentiable Gaussian splatting: color images, scale maps and gradients.

mod project;
mod raster;
pub mod reference;
pub mod sh;

use nalgebra::{Vector2, Vector3};

pub use project::{
    project, project_backward, projected_covariance, PrimitiveGrad, Projection, RenderOptions, Splat2D, SplatGrad,
};
pub use raster::{prepare_splats, rasterize, rasterize_backward, weight_budget, RenderStats};

use crate::error::{Error, Result};
use crate::types::{Camera, GaussianScene, ImageFrame, Trajectory, VideoClip};

/// Largest normalized scale; keeps every `1 - S` feature strictly positive.
pub const SCALE_FEATURE_CAP: f64 = 1.0 - 1e-6;

/// Per-pixel composited `1 - S` features, `H x W x 3`, each in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScaleMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{} scale-map values for {width}x{height}x3",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && (0.0..1.0).contains(*v))) {
            return Err(Error::invalid(format!("scale-map value {v} outside [0, 1)")));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }
}

/// `1 - S` per axis, with `S = min(scale / s_max, cap)` sorted so channel 0 is the largest axis.
pub fn scale_features(scale: &Vector3<f64>, s_max: f64) -> Vector3<f64> {
    let mut s = [0.0; 3];
    for k in 0..3 {
        s[k] = (scale[k] / s_max).min(SCALE_FEATURE_CAP);
    }
    s.sort_by(|a, b| b.total_cmp(a));
    Vector3::new(1.0 - s[0], 1.0 - s[1], 1.0 - s[2])
}

fn background_vec(bg: [f64; 3]) -> Vector3<f64> {
    Vector3::new(bg[0], bg[1], bg[2])
}

pub fn render_color_with(
    scene: &GaussianScene,
    camera: &Camera,
    background: [f64; 3],
    opts: &RenderOptions,
) -> Result<(ImageFrame, RenderStats)> {
    let (splats, stats) = prepare_splats(scene, camera, opts);
    let colors: Vec<_> = splats.iter().map(|s| s.evaluated_color).collect();
    let (data, _) = rasterize(&splats, &colors, background_vec(background), camera.width, camera.height, opts);
    Ok((ImageFrame::from_clamped(camera.width, camera.height, data)?, stats))
}

/// Front-to-back alpha compositing of the scene seen from `camera`.
pub fn render_color(scene: &GaussianScene, camera: &Camera, background: [f64; 3]) -> Result<ImageFrame> {
    render_color_with(scene, camera, background, &RenderOptions::default()).map(|(f, _)| f)
}

pub fn render_scale_map_with(
    scene: &GaussianScene,
    camera: &Camera,
    s_max: f64,
    opts: &RenderOptions,
) -> Result<ScaleMap> {
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(Error::invalid(format!("s_max {s_max} must be positive")));
    }
    let (splats, _) = prepare_splats(scene, camera, opts);
    let features: Vec<_> = splats
        .iter()
        .map(|s| scale_features(&scene.primitives[s.index].scale, s_max))
        .collect();
    let (data, _) = rasterize(&splats, &features, Vector3::zeros(), camera.width, camera.height, opts);
    ScaleMap::new(camera.width, camera.height, data)
}

/// Composites normalized `1 - scale` instead of color; high values mark regions
/// covered by small Gaussians.
pub fn render_scale_map(scene: &GaussianScene, camera: &Camera, s_max: f64) -> Result<ScaleMap> {
    render_scale_map_with(scene, camera, s_max, &RenderOptions::default())
}

/// Renders every camera of the trajectory; frame `i` is labelled with index `i`.
pub fn render_video(scene: &GaussianScene, trajectory: &Trajectory, background: [f64; 3]) -> Result<VideoClip> {
    render_video_indexed(scene, trajectory, background, 1)
}

/// Like [`render_video`], labelling frames from `first_index`.
pub fn render_video_indexed(
    scene: &GaussianScene,
    trajectory: &Trajectory,
    background: [f64; 3],
    first_index: usize,
) -> Result<VideoClip> {
    let frames = trajectory
        .cameras()
        .iter()
        .map(|c| render_color(scene, c, background))
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len();
    VideoClip::new(frames, (first_index..first_index + n).collect())
}

/// Expected camera depth per pixel (weights renormalized), and the accumulated opacity.
pub fn render_depth(scene: &GaussianScene, camera: &Camera) -> Result<(Vec<f64>, Vec<f64>)> {
    let opts = RenderOptions::default();
    let (splats, _) = prepare_splats(scene, camera, &opts);
    let depths: Vec<_> = splats.iter().map(|s| Vector3::repeat(s.view_depth)).collect();
    let (data, trans) = rasterize(&splats, &depths, Vector3::zeros(), camera.width, camera.height, &opts);
    let coverage: Vec<f64> = trans.iter().map(|t| 1.0 - t).collect();
    let depth = data
        .chunks_exact(3)
        .zip(&coverage)
        .map(|(d, &c)| if c > 1e-12 { d[0] / c } else { 0.0 })
        .collect();
    Ok((depth, coverage))
}

/// Partials of `sum(grad_image * render)` with respect to every primitive parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneGradients {
    pub primitives: Vec<PrimitiveGrad>,
    /// Gradient with respect to each projected mean, in pixels; zero when not visible.
    pub mean2d: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

impl SceneGradients {
    pub fn zeros(scene: &GaussianScene) -> Self {
        Self {
            primitives: scene
                .primitives
                .iter()
                .map(|p| PrimitiveGrad {
                    sh: vec![[0.0; 3]; p.sh.len()],
                    ..Default::default()
                })
                .collect(),
            mean2d: vec![Vector2::zeros(); scene.len()],
            visible: vec![false; scene.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.primitives.iter().all(|g| {
            g.position.iter().chain(g.scale.iter()).all(|v| v.is_finite())
                && g.rotation.iter().all(|v| v.is_finite())
                && g.opacity.is_finite()
                && g.sh.iter().flatten().all(|v| v.is_finite())
        })
    }
}

pub fn render_gradients_with(
    scene: &GaussianScene,
    camera: &Camera,
    background: [f64; 3],
    grad_image: &[f64],
    opts: &RenderOptions,
) -> Result<SceneGradients> {
    if grad_image.len() != camera.pixel_count() * 3 {
        return Err(Error::shape(format!(
            "gradient image has {} values, camera needs {}",
            grad_image.len(),
            camera.pixel_count() * 3
        )));
    }
    if !grad_image.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gradient image".into()));
    }
    let (splats, _) = prepare_splats(scene, camera, opts);
    let colors: Vec<_> = splats.iter().map(|s| s.evaluated_color).collect();
    let splat_grads = rasterize_backward(
        &splats,
        &colors,
        background_vec(background),
        camera.width,
        camera.height,
        grad_image,
        opts,
    );
    let mut out = SceneGradients::zeros(scene);
    for (s, g) in splats.iter().zip(&splat_grads) {
        let prim = &scene.primitives[s.index];
        out.primitives[s.index] = project_backward(prim, s, camera, g);
        out.mean2d[s.index] = g.mean2d;
        out.visible[s.index] = true;
    }
    Ok(out)
}

/// Analytic backward pass of [`render_color`].
pub fn render_gradients(
    scene: &GaussianScene,
    camera: &Camera,
    background: [f64; 3],
    grad_image: &[f64],
) -> Result<SceneGradients> {
    render_gradients_with(scene, camera, background, grad_image, &RenderOptions::default())
}
