//! Pixel-level momentum: thresholded scale maps decide, per pixel, how much of
//! the anchored generation to keep over the free one.

use crate::diffusion::{sample_phi, Denoiser, LatentCodec, NoiseSchedule, NoiseSource, PhiOutput, PhiSettings, StepForms};
use crate::error::{Error, Result};
use crate::render::{render_scale_map, render_video_indexed, ScaleMap};
use crate::types::{GaussianScene, ImageFrame, PipelineConfig, Trajectory, VideoClip};

/// Per-frame, per-pixel blend weights in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMomentumField {
    frames: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PixelMomentumField {
    pub fn frames(&self) -> usize {
        self.frames
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

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[i * n..(i + 1) * n]
    }
}

/// Channel maximum of each scale-map pixel, zeroed where it falls below `tau`.
pub fn pixel_momentum_field(scale_maps: &[ScaleMap], tau: f64) -> Result<PixelMomentumField> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1)")));
    }
    let first = scale_maps
        .first()
        .ok_or_else(|| Error::invalid("no scale maps"))?;
    let (w, h) = (first.width(), first.height());
    let mut values = Vec::with_capacity(scale_maps.len() * w * h);
    for m in scale_maps {
        if (m.width(), m.height()) != (w, h) {
            return Err(Error::shape("scale maps differ in resolution"));
        }
        values.extend(m.values().chunks_exact(3).map(|s| {
            let peak = s[0].max(s[1]).max(s[2]);
            if peak >= tau {
                peak
            } else {
                0.0
            }
        }));
    }
    Ok(PixelMomentumField {
        frames: scale_maps.len(),
        width: w,
        height: h,
        values,
    })
}

/// `mu * consistent + (1 - mu) * free` per pixel, broadcast over RGB and clamped to `[0, 1]`.
pub fn cascade_blend(consistent: &VideoClip, free: &VideoClip, mu: &PixelMomentumField) -> Result<VideoClip> {
    if consistent.len() != free.len() || consistent.len() != mu.frames() {
        return Err(Error::shape(format!(
            "frame counts differ: {} consistent, {} free, {} momentum",
            consistent.len(),
            free.len(),
            mu.frames()
        )));
    }
    let mut frames = Vec::with_capacity(free.len());
    for (i, (a, b)) in consistent.frames().iter().zip(free.frames()).enumerate() {
        if !a.same_shape(b) || (a.width(), a.height()) != (mu.width(), mu.height()) {
            return Err(Error::shape(format!("frame {i} resolution mismatch")));
        }
        let m = mu.frame(i);
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .enumerate()
            .map(|(k, (x, y))| {
                let w = m[k / 3];
                if w == 0.0 {
                    *y
                } else {
                    w * x + (1.0 - w) * y
                }
            })
            .collect();
        frames.push(ImageFrame::from_clamped(a.width(), a.height(), data)?);
    }
    VideoClip::new(frames, free.frame_indices().to_vec())
}

/// Sampler and blending parameters for one window.
#[derive(Clone, Copy, Debug)]
pub struct EnhanceSettings {
    pub lambda0: f64,
    pub tau: f64,
    pub s_max: f64,
    pub background: [f64; 3],
    pub forms: StepForms,
}

impl EnhanceSettings {
    pub fn from_config(cfg: &PipelineConfig, s_max: f64) -> Self {
        Self {
            lambda0: cfg.lambda0,
            tau: cfg.tau,
            s_max,
            background: cfg.background,
            forms: StepForms {
                reverse: cfg.reverse_step,
                momentum_noise: cfg.momentum_noise,
            },
        }
    }
}

/// Every intermediate of one window's enhancement.
#[derive(Clone, Debug)]
pub struct WindowOutput {
    pub rendered: VideoClip,
    pub scale_maps: Vec<ScaleMap>,
    pub consistent: PhiOutput,
    pub free: PhiOutput,
    pub mu: PixelMomentumField,
    pub blended: VideoClip,
}

const PASS_CONSISTENT: u64 = 1;
const PASS_FREE: u64 = 2;

/// Renders the window, runs the anchored and free samplers, and blends them by scale-map momentum.
///
/// `first_index` is the global trajectory index of the window's first camera.
#[allow(clippy::too_many_arguments)]
pub fn enhance_window(
    scene: &GaussianScene,
    cameras: &Trajectory,
    first_index: usize,
    input_image: &ImageFrame,
    n_well: usize,
    settings: &EnhanceSettings,
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    schedule: &NoiseSchedule,
    noise: &NoiseSource,
) -> Result<WindowOutput> {
    let rendered = render_video_indexed(scene, cameras, settings.background, first_index)?;
    let scale_maps = cameras
        .cameras()
        .iter()
        .map(|c| render_scale_map(scene, c, settings.s_max))
        .collect::<Result<Vec<_>>>()?;
    let consistent_settings = PhiSettings {
        lambda0: settings.lambda0,
        n_well,
        forms: settings.forms,
    };
    let free_settings = PhiSettings {
        lambda0: 0.0,
        ..consistent_settings
    };
    let consistent_noise = noise.substream(&[PASS_CONSISTENT]);
    let free_noise = noise.substream(&[PASS_FREE]);
    let (consistent, free) = rayon::join(
        || sample_phi(&rendered, input_image, &consistent_settings, codec, denoiser, schedule, &consistent_noise),
        || sample_phi(&rendered, input_image, &free_settings, codec, denoiser, schedule, &free_noise),
    );
    let (consistent, free) = (consistent?, free?);
    let mu = pixel_momentum_field(&scale_maps, settings.tau)?;
    let blended = cascade_blend(&consistent.clip, &free.clip, &mu)?;
    Ok(WindowOutput {
        rendered,
        scale_maps,
        consistent,
        free,
        mu,
        blended,
    })
}
