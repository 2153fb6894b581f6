#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenesplat::types::{rgb_to_dc, sh_coeff_count, Camera, GaussianPrimitive, GaussianScene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(width: usize, height: usize, focal: f64) -> Camera {
    Camera::new(
        focal,
        focal,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        width,
        height,
        Matrix3::identity(),
        Vector3::zeros(),
    )
    .unwrap()
}

pub fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Random Gaussians inside the view frustum of `cam`.
pub fn random_scene(rng: &mut impl Rng, cam: &Camera, count: usize, degree: usize) -> GaussianScene {
    let coeffs = sh_coeff_count(degree);
    let prims = (0..count)
        .map(|_| {
            let depth = rng.random_range(2.0..5.0);
            let px = rng.random_range(-2.0..cam.width as f64 + 2.0);
            let py = rng.random_range(-2.0..cam.height as f64 + 2.0);
            let pos = cam.camera_to_world(&Vector3::new(
                depth * (px - cam.cx) / cam.fx,
                depth * (py - cam.cy) / cam.fy,
                depth,
            ));
            let scale = Vector3::from_fn(|_, _| rng.random_range(0.04..0.25));
            let rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
            let mut sh = vec![rgb_to_dc(rgb)];
            for _ in 1..coeffs {
                sh.push(std::array::from_fn(|_| rng.random_range(-0.15..0.15)));
            }
            GaussianPrimitive::new(pos, scale, random_quaternion(rng), rng.random_range(0.1..0.9), sh).unwrap()
        })
        .collect();
    GaussianScene::from_primitives(degree, prims)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn param_count(p: &GaussianPrimitive) -> usize {
    11 + 3 * p.sh.len()
}

pub fn get_param(p: &GaussianPrimitive, k: usize) -> f64 {
    match k {
        0..=2 => p.position[k],
        3..=5 => p.scale[k - 3],
        6..=9 => p.rotation[k - 6],
        10 => p.opacity,
        _ => p.sh[(k - 11) / 3][(k - 11) % 3],
    }
}

pub fn set_param(p: &mut GaussianPrimitive, k: usize, v: f64) {
    match k {
        0..=2 => p.position[k] = v,
        3..=5 => p.scale[k - 3] = v,
        6..=9 => p.rotation[k - 6] = v,
        10 => p.opacity = v,
        _ => p.sh[(k - 11) / 3][(k - 11) % 3] = v,
    }
}

pub fn grad_param(g: &scenesplat::render::PrimitiveGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.position[k],
        3..=5 => g.scale[k - 3],
        6..=9 => g.rotation[k - 6],
        10 => g.opacity,
        _ => g.sh[(k - 11) / 3][(k - 11) % 3],
    }
}

/// Outcome of comparing analytic partials against central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub total: usize,
    pub passed: usize,
    pub worst: Vec<(usize, usize, f64, f64)>,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total.max(1) as f64
    }
}

/// Central finite differences of `sum(grad_image * render_color)` for every parameter.
///
/// Step is `1e-4` relative to the parameter magnitude (floored at `1e-4 * 0.1`).
/// A partial passes when `|a - f| <= rel_tol * max(|a|, |f|)` or both are below
/// `abs_floor` (parameters whose influence is numerically nil).
pub fn finite_difference_check(
    scene: &GaussianScene,
    cam: &Camera,
    background: [f64; 3],
    grad_image: &[f64],
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    let loss = |s: &GaussianScene| -> f64 {
        let img = scenesplat::render::render_color(s, cam, background).unwrap();
        img.data().iter().zip(grad_image).map(|(a, b)| a * b).sum()
    };
    let analytic = scenesplat::render::render_gradients(scene, cam, background, grad_image).unwrap();
    let mut check = GradCheck::default();
    for i in 0..scene.len() {
        for k in 0..param_count(&scene.primitives[i]) {
            let p0 = get_param(&scene.primitives[i], k);
            let h = 1e-4 * p0.abs().max(0.1);
            let mut plus = scene.clone();
            set_param(&mut plus.primitives[i], k, p0 + h);
            let mut minus = scene.clone();
            set_param(&mut minus.primitives[i], k, p0 - h);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = grad_param(&analytic.primitives[i], k);
            let ok = (a - fd).abs() <= rel_tol * a.abs().max(fd.abs()) || (a.abs() < abs_floor && fd.abs() < abs_floor);
            check.total += 1;
            if ok {
                check.passed += 1;
            } else {
                check.worst.push((i, k, a, fd));
            }
        }
    }
    check
}

/// A `nx x ny` grid of isotropic Gaussians at `depth`, spread over the pixel
/// rectangle `[x0, x1) x [0, height)` of `cam`.
pub fn grid_scene(cam: &Camera, nx: usize, ny: usize, x_range: (f64, f64), depth: f64, opacity: f64) -> GaussianScene {
    let mut prims = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let px = x_range.0 + (i as f64 + 0.5) * (x_range.1 - x_range.0) / nx as f64;
            let py = (j as f64 + 0.5) * cam.height as f64 / ny as f64;
            let pos = cam.camera_to_world(&Vector3::new(
                depth * (px - cam.cx) / cam.fx,
                depth * (py - cam.cy) / cam.fy,
                depth,
            ));
            let footprint = (x_range.1 - x_range.0) / nx as f64 * depth / cam.fx;
            let rgb = [
                0.2 + 0.6 * i as f64 / nx as f64,
                0.3 + 0.5 * j as f64 / ny as f64,
                0.7 - 0.4 * (i + j) as f64 / (nx + ny) as f64,
            ];
            prims.push(GaussianPrimitive::isotropic(pos, 0.6 * footprint, opacity, rgb).unwrap());
        }
    }
    GaussianScene::from_primitives(0, prims)
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}
