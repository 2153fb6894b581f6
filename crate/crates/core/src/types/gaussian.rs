use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Lower bound for every per-axis scale.
pub const SCALE_EPS: f64 = 1e-7;

/// Zeroth-order spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Number of SH coefficients per color channel for a given degree.
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// One anisotropic 3D Gaussian.
///
/// `rotation` is a unit quaternion stored as `(w, x, y, z)`. `sh` holds one RGB
/// triple per spherical-harmonic coefficient; the evaluated color is
/// `0.5 + sum(basis * coeff)`, so a degree-0 primitive with DC coefficient
/// `(rgb - 0.5) / SH_C0` renders as plain `rgb`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    /// Builds a primitive, normalizing the quaternion and checking invariants.
    pub fn new(
        position: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: [f64; 4],
        opacity: f64,
        sh: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let rotation = normalize_quaternion(rotation)?;
        let prim = Self {
            position,
            scale,
            rotation,
            opacity,
            sh,
        };
        let mut violations = Vec::new();
        prim.check(0, &mut violations);
        match violations.into_iter().next() {
            None => Ok(prim),
            Some(v) => Err(Error::invalid(v.to_string())),
        }
    }

    /// Degree-0 primitive with an identity rotation and a plain RGB color.
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3]) -> Result<Self> {
        Self::new(
            position,
            Vector3::repeat(scale),
            [1.0, 0.0, 0.0, 0.0],
            opacity,
            vec![rgb_to_dc(rgb)],
        )
    }

    pub fn sh_degree(&self) -> usize {
        let n = self.sh.len();
        let mut d = 0;
        while sh_coeff_count(d + 1) <= n {
            d += 1;
        }
        d
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_matrix(&self.scale, &self.rotation)
    }

    /// Base (view-independent) color, i.e. the DC term only.
    pub fn base_color(&self) -> [f64; 3] {
        dc_to_rgb(self.sh[0])
    }

    fn check(&self, index: usize, out: &mut Vec<Violation>) {
        let mut push = |field: &'static str, message: String| {
            out.push(Violation {
                primitive: index,
                field,
                message,
            })
        };
        if !self.position.iter().all(|v| v.is_finite()) {
            push("position", format!("non-finite position {:?}", self.position.as_slice()));
        }
        if !self.scale.iter().all(|&s| s.is_finite() && s >= SCALE_EPS) {
            push("scale", format!("scale {:?} must be finite and >= {SCALE_EPS}", self.scale.as_slice()));
        }
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            push("rotation", format!("quaternion norm {norm} is not 1"));
        }
        if !(self.opacity.is_finite() && (0.0..1.0).contains(&self.opacity)) {
            push("opacity", format!("opacity {} outside [0, 1)", self.opacity));
        }
        let n = self.sh.len();
        if !(n == 1 || n == 4 || n == 9) {
            push("sh", format!("{n} SH coefficients do not match degree 0, 1 or 2"));
        } else if !self.sh.iter().flatten().all(|v| v.is_finite()) {
            push("sh", "non-finite SH coefficient".to_string());
        }
    }
}

pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

pub fn dc_to_rgb(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|c| c * SH_C0 + 0.5)
}

/// The 3D representation being optimized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub sh_degree: usize,
    pub metadata: BTreeMap<String, String>,
}

impl GaussianScene {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            primitives: Vec::new(),
            sh_degree,
            metadata: BTreeMap::new(),
        }
    }

    pub fn from_primitives(sh_degree: usize, primitives: Vec<GaussianPrimitive>) -> Self {
        Self {
            primitives,
            sh_degree,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Radius of the bounding sphere around the centroid of all means.
    pub fn extent(&self) -> f64 {
        if self.primitives.is_empty() {
            return 1.0;
        }
        let n = self.primitives.len() as f64;
        let centroid = self
            .primitives
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.position)
            / n;
        let radius = self
            .primitives
            .iter()
            .map(|p| (p.position - centroid).norm())
            .fold(0.0, f64::max);
        if radius > 0.0 {
            radius
        } else {
            1.0
        }
    }

    /// The 90th-percentile per-axis scale, used as the default scale-map bound.
    pub fn scale_percentile(&self, q: f64) -> f64 {
        let mut all: Vec<f64> = self
            .primitives
            .iter()
            .flat_map(|p| p.scale.iter().copied())
            .collect();
        if all.is_empty() {
            return 1.0;
        }
        all.sort_by(f64::total_cmp);
        let idx = ((all.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
        all[idx]
    }
}

/// A single invariant violation found by [`validate_scene`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub primitive: usize,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "primitive {} field `{}`: {}", self.primitive, self.field, self.message)
    }
}

/// Checks every primitive invariant; an empty report means the scene is valid.
pub fn validate_scene(scene: &GaussianScene) -> Vec<Violation> {
    let expected = sh_coeff_count(scene.sh_degree);
    let mut out = Vec::new();
    for (i, p) in scene.primitives.iter().enumerate() {
        p.check(i, &mut out);
        if p.sh.len() != expected && matches!(p.sh.len(), 1 | 4 | 9) {
            out.push(Violation {
                primitive: i,
                field: "sh",
                message: format!(
                    "{} coefficients but scene degree {} needs {expected}",
                    p.sh.len(),
                    scene.sh_degree
                ),
            });
        }
    }
    out
}

pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::invalid(format!("quaternion {q:?} cannot be normalized")));
    }
    Ok(q.map(|v| v / norm))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b` of two `(w, x, y, z)` quaternions.
pub fn quaternion_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// `Σ = R S Sᵀ Rᵀ` for a per-axis scale and a rotation quaternion.
///
/// The quaternion is normalized before use.
pub fn covariance_matrix(scale: &Vector3<f64>, rotation: &[f64; 4]) -> Result<Matrix3<f64>> {
    if !scale.iter().all(|&s| s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!(
            "scale {:?} must be finite and positive",
            scale.as_slice()
        )));
    }
    let r = rotation_matrix(&normalize_quaternion(*rotation)?);
    let m = r * Matrix3::from_diagonal(scale);
    Ok(m * m.transpose())
}
