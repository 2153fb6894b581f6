//! Real spherical harmonics up to degree 2, in the 3DGS sign convention.

use nalgebra::Vector3;

use crate::types::SH_C0;

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Basis values for a unit direction, one per coefficient.
pub fn basis(dir: &Vector3<f64>, coeffs: usize) -> [f64; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 9];
    b[0] = SH_C0;
    if coeffs > 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if coeffs > 4 {
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (x * x - y * y);
    }
    b
}

/// Partial derivatives of each basis function with respect to `(x, y, z)`.
fn basis_jacobian(dir: &Vector3<f64>, coeffs: usize) -> [[f64; 3]; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut j = [[0.0; 3]; 9];
    if coeffs > 1 {
        j[1] = [0.0, -SH_C1, 0.0];
        j[2] = [0.0, 0.0, SH_C1];
        j[3] = [-SH_C1, 0.0, 0.0];
    }
    if coeffs > 4 {
        j[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        j[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        j[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        j[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        j[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    j
}

/// Color seen along `dir`, clamped below at zero. Also returns which channels were clamped.
pub fn eval_color(sh: &[[f64; 3]], dir: &Vector3<f64>) -> (Vector3<f64>, [bool; 3]) {
    let b = basis(dir, sh.len());
    let mut c = [0.5; 3];
    for (coef, bk) in sh.iter().zip(b.iter()) {
        for ch in 0..3 {
            c[ch] += bk * coef[ch];
        }
    }
    let clamped = c.map(|v| v < 0.0);
    (Vector3::from(c.map(|v| v.max(0.0))), clamped)
}

/// Backpropagates a color gradient to the SH coefficients and the view direction.
pub fn eval_color_backward(
    sh: &[[f64; 3]],
    dir: &Vector3<f64>,
    clamped: [bool; 3],
    d_color: &Vector3<f64>,
    d_sh: &mut [[f64; 3]],
) -> Vector3<f64> {
    let mut g = *d_color;
    for ch in 0..3 {
        if clamped[ch] {
            g[ch] = 0.0;
        }
    }
    let b = basis(dir, sh.len());
    for (k, d) in d_sh.iter_mut().enumerate().take(sh.len()) {
        for ch in 0..3 {
            d[ch] += b[k] * g[ch];
        }
    }
    let mut d_dir = Vector3::zeros();
    if sh.len() > 1 {
        let jac = basis_jacobian(dir, sh.len());
        for (k, coef) in sh.iter().enumerate().skip(1) {
            let s = coef[0] * g[0] + coef[1] * g[1] + coef[2] * g[2];
            for a in 0..3 {
                d_dir[a] += s * jac[k][a];
            }
        }
    }
    d_dir
}
