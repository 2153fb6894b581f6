//! Tile-based front-to-back compositing with an analytic backward pass.
//!
//! Splats are sorted once per view by camera depth, binned into square tiles
//! by their cutoff bounding boxes, and each tile composites its pixels
//! independently. The backward pass replays each pixel, scans its
//! contributors back to front, and accumulates per-tile gradients that are
//! reduced in tile order so results do not depend on thread scheduling.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::project::{project, Projection, RenderOptions, Splat2D, SplatGrad};
use crate::types::{Camera, GaussianScene};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub visible: usize,
    pub culled: usize,
    pub degenerate: usize,
}

/// Projects every primitive and sorts the visible splats front to back.
pub fn prepare_splats(scene: &GaussianScene, camera: &Camera, opts: &RenderOptions) -> (Vec<Splat2D>, RenderStats) {
    let mut stats = RenderStats::default();
    let mut splats: Vec<Splat2D> = scene
        .primitives
        .par_iter()
        .enumerate()
        .map(|(i, p)| project(p, i, camera, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|p| match p {
            Projection::Visible(s) => Some(s),
            Projection::Culled => {
                stats.culled += 1;
                None
            }
            Projection::Degenerate => {
                stats.degenerate += 1;
                None
            }
        })
        .collect();
    splats.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth).then(a.index.cmp(&b.index)));
    stats.visible = splats.len();
    if stats.culled + stats.degenerate > 0 {
        log::debug!(
            "render: {} visible, {} culled, {} degenerate",
            stats.visible,
            stats.culled,
            stats.degenerate
        );
    }
    (splats, stats)
}

struct TileGrid {
    tile: usize,
    cols: usize,
    rows: usize,
    /// Per tile, positions into the sorted splat list.
    lists: Vec<Vec<u32>>,
}

impl TileGrid {
    fn build(splats: &[Splat2D], width: usize, height: usize, tile: usize) -> Self {
        let cols = width.div_ceil(tile);
        let rows = height.div_ceil(tile);
        let mut lists = vec![Vec::new(); cols * rows];
        for (k, s) in splats.iter().enumerate() {
            let [x0, y0, x1, y1] = s.bbox;
            for ty in y0 / tile..=y1 / tile {
                for tx in x0 / tile..=x1 / tile {
                    lists[ty * cols + tx].push(k as u32);
                }
            }
        }
        Self { tile, cols, rows, lists }
    }

    fn pixels(&self, t: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (t % self.cols, t / self.cols);
        let x0 = tx * self.tile;
        let y0 = ty * self.tile;
        let x1 = (x0 + self.tile).min(width);
        let y1 = (y0 + self.tile).min(height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// One splat's effect on one pixel.
#[derive(Clone, Copy)]
struct Hit {
    /// Position in the tile list.
    slot: usize,
    alpha: f64,
    gauss: f64,
    delta: Vector2<f64>,
    transmittance: f64,
}

/// Composites one pixel, reporting every contributing splat to `visit`.
fn composite_pixel(
    x: usize,
    y: usize,
    list: &[u32],
    splats: &[Splat2D],
    features: &[Vector3<f64>],
    opts: &RenderOptions,
    mut visit: impl FnMut(Hit),
) -> (Vector3<f64>, f64) {
    let pix = Vector2::new(x as f64, y as f64);
    let cutoff = -0.5 * opts.cutoff_sigma * opts.cutoff_sigma;
    let mut t = 1.0;
    let mut acc = Vector3::zeros();
    for (slot, &k) in list.iter().enumerate() {
        let s = &splats[k as usize];
        let [x0, y0, x1, y1] = s.bbox;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            continue;
        }
        let d = pix - s.mean2d;
        let power = -0.5 * (d.transpose() * s.conic * d)[(0, 0)];
        if power < cutoff || power > 0.0 {
            continue;
        }
        let gauss = power.exp();
        let alpha = s.base_opacity * gauss;
        if alpha < opts.alpha_min {
            continue;
        }
        acc += features[k as usize] * (alpha * t);
        visit(Hit {
            slot,
            alpha,
            gauss,
            delta: d,
            transmittance: t,
        });
        t *= 1.0 - alpha;
        if t < opts.transmittance_min {
            break;
        }
    }
    (acc, t)
}

/// Raw composited values per pixel (`H x W x 3`, unclamped) and the final transmittance per pixel.
pub fn rasterize(
    splats: &[Splat2D],
    features: &[Vector3<f64>],
    background: Vector3<f64>,
    width: usize,
    height: usize,
    opts: &RenderOptions,
) -> (Vec<f64>, Vec<f64>) {
    let grid = TileGrid::build(splats, width, height, opts.tile_size.max(1));
    let tiles: Vec<Vec<(usize, Vector3<f64>, f64)>> = (0..grid.cols * grid.rows)
        .into_par_iter()
        .map(|t| {
            grid.pixels(t, width, height)
                .map(|(x, y)| {
                    let (c, tf) = composite_pixel(x, y, &grid.lists[t], splats, features, opts, |_| {});
                    (y * width + x, c + background * tf, tf)
                })
                .collect()
        })
        .collect();
    let mut image = vec![0.0; width * height * 3];
    let mut trans = vec![0.0; width * height];
    for tile in tiles {
        for (p, c, tf) in tile {
            image[p * 3..p * 3 + 3].copy_from_slice(c.as_slice());
            trans[p] = tf;
        }
    }
    (image, trans)
}

/// Gradient of `sum(grad_image * clamp(rendered, 0, 1))` with respect to each splat's
/// screen-space quantities, indexed like `splats`.
pub fn rasterize_backward(
    splats: &[Splat2D],
    features: &[Vector3<f64>],
    background: Vector3<f64>,
    width: usize,
    height: usize,
    grad_image: &[f64],
    opts: &RenderOptions,
) -> Vec<SplatGrad> {
    let grid = TileGrid::build(splats, width, height, opts.tile_size.max(1));
    let per_tile: Vec<Vec<SplatGrad>> = (0..grid.cols * grid.rows)
        .into_par_iter()
        .map(|t| {
            let list = &grid.lists[t];
            let mut grads = vec![SplatGrad::default(); list.len()];
            let mut hits = Vec::new();
            for (x, y) in grid.pixels(t, width, height) {
                let p = y * width + x;
                let mut d_out = Vector3::new(grad_image[p * 3], grad_image[p * 3 + 1], grad_image[p * 3 + 2]);
                if d_out == Vector3::zeros() {
                    continue;
                }
                hits.clear();
                let (acc, t_final) = composite_pixel(x, y, list, splats, features, opts, |h| hits.push(h));
                let out = acc + background * t_final;
                for ch in 0..3 {
                    if out[ch] < 0.0 || out[ch] > 1.0 {
                        d_out[ch] = 0.0;
                    }
                }
                // Reverse scan: g_next is dL/dT_{i+1}.
                let mut g_next = d_out.dot(&background);
                for h in hits.iter().rev() {
                    let s = &splats[list[h.slot] as usize];
                    let f = features[list[h.slot] as usize];
                    let g = &mut grads[h.slot];
                    g.color += d_out * (h.alpha * h.transmittance);
                    let d_alpha = h.transmittance * (d_out.dot(&f) - g_next);
                    g_next = d_out.dot(&f) * h.alpha + g_next * (1.0 - h.alpha);

                    g.opacity += d_alpha * h.gauss;
                    let d_power = d_alpha * h.alpha;
                    // power = -1/2 dᵀ C d with d = pixel - mean.
                    let cd = s.conic * h.delta;
                    g.mean2d += cd * d_power;
                    g.conic += h.delta * h.delta.transpose() * (-0.5 * d_power);
                }
            }
            grads
        })
        .collect();

    let mut out = vec![SplatGrad::default(); splats.len()];
    for (t, grads) in per_tile.into_iter().enumerate() {
        for (slot, g) in grads.into_iter().enumerate() {
            out[grid.lists[t][slot] as usize] += g;
        }
    }
    out
}

/// Sum of compositing weights plus final transmittance at one pixel; exactly 1 up to rounding.
pub fn weight_budget(splats: &[Splat2D], x: usize, y: usize, opts: &RenderOptions) -> (f64, f64) {
    let list: Vec<u32> = (0..splats.len() as u32).collect();
    let ones = vec![Vector3::new(1.0, 1.0, 1.0); splats.len()];
    let (acc, t) = composite_pixel(x, y, &list, splats, &ones, opts, |_| {});
    (acc.x, t)
}
