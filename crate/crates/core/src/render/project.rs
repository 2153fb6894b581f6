//! Perspective projection of 3D Gaussians to screen-space splats and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::sh;
use crate::types::{normalize_quaternion, rotation_matrix, Camera, GaussianPrimitive};

/// Rasterization constants shared by the fast and reference renderers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Added to the diagonal of every 2D covariance, in px².
    pub blur_eps: f64,
    pub near_plane: f64,
    /// Contributions with effective alpha below this are skipped.
    pub alpha_min: f64,
    /// A pixel stops compositing once its transmittance drops below this.
    pub transmittance_min: f64,
    /// Footprint cutoff in standard deviations of the 2D covariance.
    pub cutoff_sigma: f64,
    /// Splats whose 2D covariance condition number exceeds this are skipped.
    pub max_condition: f64,
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            blur_eps: 0.3,
            near_plane: 0.01,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            cutoff_sigma: 3.0,
            max_condition: 1e12,
            tile_size: 16,
        }
    }
}

/// A primitive after projection into one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Index of the source primitive in the scene.
    pub index: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub view_depth: f64,
    pub base_opacity: f64,
    pub evaluated_color: Vector3<f64>,
    /// Per-axis `1 - S` features for the scale map; zero until filled in.
    pub scale_feature: Vector3<f64>,
    /// Inclusive pixel bounding box `[x0, y0, x1, y1]` of the cutoff ellipse, clipped to the image.
    pub bbox: [usize; 4],
    pub(crate) color_clamped: [bool; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Visible(Splat2D),
    Culled,
    Degenerate,
}

struct Geometry {
    cam_point: Vector3<f64>,
    jacobian: Matrix2x3<f64>,
    world_cov: Matrix3<f64>,
}

fn geometry(prim: &GaussianPrimitive, camera: &Camera) -> Option<Geometry> {
    let t = camera.world_to_camera(&prim.position);
    let q = normalize_quaternion(prim.rotation).ok()?;
    let r = rotation_matrix(&q);
    let m = r * Matrix3::from_diagonal(&prim.scale);
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let jacobian = Matrix2x3::new(
        camera.fx / tz,
        0.0,
        -camera.fx * tx / (tz * tz),
        0.0,
        camera.fy / tz,
        -camera.fy * ty / (tz * tz),
    );
    Some(Geometry {
        cam_point: t,
        jacobian,
        world_cov: m * m.transpose(),
    })
}

/// 2D covariance `J W Σ Wᵀ Jᵀ` before regularization.
pub fn projected_covariance(prim: &GaussianPrimitive, camera: &Camera) -> Option<Matrix2<f64>> {
    let g = geometry(prim, camera)?;
    let w = camera.rotation;
    Some(g.jacobian * w * g.world_cov * w.transpose() * g.jacobian.transpose())
}

/// Projects one primitive, or reports it culled (behind the near plane or off-screen)
/// or degenerate (ill-conditioned 2D covariance).
pub fn project(prim: &GaussianPrimitive, index: usize, camera: &Camera, opts: &RenderOptions) -> Projection {
    let Some(g) = geometry(prim, camera) else {
        return Projection::Degenerate;
    };
    if !(g.cam_point.z > opts.near_plane) {
        return Projection::Culled;
    }
    let w = camera.rotation;
    let cov = g.jacobian * w * g.world_cov * w.transpose() * g.jacobian.transpose();
    let cov2d = Matrix2::new(cov[(0, 0)] + opts.blur_eps, cov[(0, 1)], cov[(1, 0)], cov[(1, 1)] + opts.blur_eps);
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let det = cov2d.determinant();
    let trace = cov2d.trace();
    let disc = (0.25 * trace * trace - det).max(0.0).sqrt();
    let (l_max, l_min) = (0.5 * trace + disc, 0.5 * trace - disc);
    if !(det > 0.0 && l_min > 0.0 && l_max / l_min <= opts.max_condition) || !det.is_finite() {
        return Projection::Degenerate;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;

    let mean2d = camera.project_camera_point(&g.cam_point);
    let rx = opts.cutoff_sigma * cov2d[(0, 0)].sqrt();
    let ry = opts.cutoff_sigma * cov2d[(1, 1)].sqrt();
    let x0 = (mean2d.x - rx).ceil().max(0.0);
    let y0 = (mean2d.y - ry).ceil().max(0.0);
    let x1 = (mean2d.x + rx).floor().min(camera.width as f64 - 1.0);
    let y1 = (mean2d.y + ry).floor().min(camera.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return Projection::Culled;
    }

    let dir = (prim.position - camera.center()).normalize();
    let (evaluated_color, color_clamped) = sh::eval_color(&prim.sh, &dir);
    Projection::Visible(Splat2D {
        index,
        mean2d,
        cov2d,
        conic,
        view_depth: g.cam_point.z,
        base_opacity: prim.opacity,
        evaluated_color,
        scale_feature: Vector3::zeros(),
        bbox: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
        color_clamped,
    })
}

/// Gradients of a scalar loss with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: Vector2<f64>,
    /// Gradient with respect to the full (symmetric) conic matrix.
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl std::ops::AddAssign for SplatGrad {
    fn add_assign(&mut self, o: Self) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Per-primitive parameter gradients produced by [`project_backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrimitiveGrad {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

fn rotation_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

/// Chains screen-space splat gradients back to the primitive's parameters.
pub fn project_backward(prim: &GaussianPrimitive, splat: &Splat2D, camera: &Camera, grad: &SplatGrad) -> PrimitiveGrad {
    let mut out = PrimitiveGrad {
        sh: vec![[0.0; 3]; prim.sh.len()],
        ..Default::default()
    };
    let g = geometry(prim, camera).expect("projected primitives have valid geometry");
    let w = camera.rotation;
    let t = g.cam_point;
    let (fx, fy) = (camera.fx, camera.fy);

    out.opacity = grad.opacity;

    // Color through SH evaluation; the view direction depends on the position.
    let offset = prim.position - camera.center();
    let dist = offset.norm();
    let dir = offset / dist;
    let d_dir = sh::eval_color_backward(&prim.sh, &dir, splat.color_clamped, &grad.color, &mut out.sh);
    let mut d_position = (d_dir - dir * dir.dot(&d_dir)) / dist;

    // Conic is the inverse of cov2d: dL/dΣ2 = -C (dL/dC) C.
    let c = splat.conic;
    let d_cov2d = -(c * grad.conic * c);
    let d_cov2d = (d_cov2d + d_cov2d.transpose()) * 0.5;

    // Σ2 = J M Jᵀ with M = W Σ Wᵀ.
    let m = w * g.world_cov * w.transpose();
    let j = g.jacobian;
    let d_m = j.transpose() * d_cov2d * j;
    let d_j = 2.0 * d_cov2d * j * m;
    let d_sigma = w.transpose() * d_m * w;

    // Mean and Jacobian both depend on the camera-space point.
    let mut d_t = Vector3::zeros();
    d_t.x += grad.mean2d.x * fx / t.z;
    d_t.z += -grad.mean2d.x * fx * t.x / (t.z * t.z);
    d_t.y += grad.mean2d.y * fy / t.z;
    d_t.z += -grad.mean2d.y * fy * t.y / (t.z * t.z);
    let tz2 = t.z * t.z;
    let tz3 = tz2 * t.z;
    d_t.x += d_j[(0, 2)] * (-fx / tz2);
    d_t.y += d_j[(1, 2)] * (-fy / tz2);
    d_t.z += d_j[(0, 0)] * (-fx / tz2)
        + d_j[(0, 2)] * (2.0 * fx * t.x / tz3)
        + d_j[(1, 1)] * (-fy / tz2)
        + d_j[(1, 2)] * (2.0 * fy * t.y / tz3);
    d_position += w.transpose() * d_t;
    out.position = d_position;

    // Σ = A Aᵀ with A = R diag(s).
    let qn = prim.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = prim.rotation.map(|v| v / qn);
    let r = rotation_matrix(&q);
    let a = r * Matrix3::from_diagonal(&prim.scale);
    let d_a = (d_sigma + d_sigma.transpose()) * a;
    let mut d_r = Matrix3::zeros();
    for i in 0..3 {
        for k in 0..3 {
            out.scale[k] += d_a[(i, k)] * r[(i, k)];
            d_r[(i, k)] = d_a[(i, k)] * prim.scale[k];
        }
    }
    let partials = rotation_partials(&q);
    let d_qn: [f64; 4] = std::array::from_fn(|k| partials[k].component_mul(&d_r).sum());
    // Undo the normalization: dL/dq = (I - q̂q̂ᵀ) dL/dq̂ / |q|.
    let dot: f64 = (0..4).map(|k| q[k] * d_qn[k]).sum();
    out.rotation = std::array::from_fn(|k| (d_qn[k] - q[k] * dot) / qn);
    out
}
