//! Brute-force reference renderer.
//!
//! Every pixel walks every projected splat in global depth order with plain
//! scalar arithmetic: no tiles, no bounding boxes, no shared compositing code
//! with the fast path. It applies the same per-pixel rules (cutoff ellipse,
//! alpha floor, early termination), so it isolates the rasterization
//! strategy when compared against [`super::render_color`].

use super::project::{RenderOptions, Splat2D};
use super::raster::prepare_splats;
use super::{scale_features, ScaleMap};
use crate::error::Result;
use crate::types::{Camera, GaussianScene, ImageFrame};

fn composite_all(
    splats: &[Splat2D],
    features: &[[f64; 3]],
    background: [f64; 3],
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> Vec<f64> {
    let mut out = vec![0.0; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let mut t = 1.0f64;
            let mut c = [0.0f64; 3];
            for (s, f) in splats.iter().zip(features) {
                let dx = x as f64 - s.mean2d.x;
                let dy = y as f64 - s.mean2d.y;
                let (a, b, d) = (s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]);
                let maha = a * dx * dx + 2.0 * b * dx * dy + d * dy * dy;
                if maha > opts.cutoff_sigma * opts.cutoff_sigma || maha < 0.0 {
                    continue;
                }
                let alpha = s.base_opacity * (-0.5 * maha).exp();
                if alpha < opts.alpha_min {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += f[ch] * alpha * t;
                }
                t *= 1.0 - alpha;
                if t < opts.transmittance_min {
                    break;
                }
            }
            let p = (y * width + x) * 3;
            for ch in 0..3 {
                out[p + ch] = c[ch] + background[ch] * t;
            }
        }
    }
    out
}

pub fn reference_render_color(
    scene: &GaussianScene,
    camera: &Camera,
    background: [f64; 3],
    opts: &RenderOptions,
) -> Result<ImageFrame> {
    let (splats, _) = prepare_splats(scene, camera, opts);
    let colors: Vec<[f64; 3]> = splats
        .iter()
        .map(|s| [s.evaluated_color.x, s.evaluated_color.y, s.evaluated_color.z])
        .collect();
    let data = composite_all(&splats, &colors, background, camera.width, camera.height, opts);
    ImageFrame::from_clamped(camera.width, camera.height, data)
}

pub fn reference_render_scale_map(
    scene: &GaussianScene,
    camera: &Camera,
    s_max: f64,
    opts: &RenderOptions,
) -> Result<ScaleMap> {
    let (splats, _) = prepare_splats(scene, camera, opts);
    let features: Vec<[f64; 3]> = splats
        .iter()
        .map(|s| {
            let f = scale_features(&scene.primitives[s.index].scale, s_max);
            [f.x, f.y, f.z]
        })
        .collect();
    let data = composite_all(&splats, &features, [0.0; 3], camera.width, camera.height, opts);
    ScaleMap::new(camera.width, camera.height, data)
}
