use crate::error::{Error, Result};
use crate::types::ImageFrame;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut g = [0.0; WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.map(|v| v / sum)
}

/// Separable 'same' convolution of one plane with zero padding.
fn blur(plane: &[f64], w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(frame: &ImageFrame, c: usize) -> Vec<f64> {
    frame.data().iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM and, optionally, its gradient with respect to `a`.
fn ssim_impl(a: &ImageFrame, b: &ImageFrame, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    a.check_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    let taps = gaussian_taps();
    let count = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let mu_x = blur(&x, w, h, &taps);
        let mu_y = blur(&y, w, h, &taps);
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let e_xx = blur(&sq(&x, &x), w, h, &taps);
        let e_yy = blur(&sq(&y, &y), w, h, &taps);
        let e_xy = blur(&sq(&x, &y), w, h, &taps);
        let n = w * h;
        let (mut d_mu, mut d_xx, mut d_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let var_x = e_xx[p] - mx * mx;
            let var_y = e_yy[p] - my * my;
            let cov = e_xy[p] - mx * my;
            let n1 = 2.0 * mx * my + C1;
            let n2 = 2.0 * cov + C2;
            let d1 = mx * mx + my * my + C1;
            let d2 = var_x + var_y + C2;
            let s = (n1 * n2) / (d1 * d2);
            total += s;
            if want_grad {
                d_mu[p] = (2.0 * my * n2 - 2.0 * my * n1) / (d1 * d2) - s * (2.0 * mx / d1 - 2.0 * mx / d2);
                d_xx[p] = -s / d2;
                d_xy[p] = 2.0 * n1 / (d1 * d2);
            }
        }
        if let Some(g) = grad.as_mut() {
            // The window is symmetric, so the adjoint of the blur is the blur itself.
            let g_mu = blur(&d_mu, w, h, &taps);
            let g_xx = blur(&d_xx, w, h, &taps);
            let g_xy = blur(&d_xy, w, h, &taps);
            for p in 0..n {
                g[p * 3 + c] = (g_mu[p] + 2.0 * x[p] * g_xx[p] + y[p] * g_xy[p]) / count;
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean structural similarity over pixels and channels (11x11 Gaussian window, sigma 1.5).
pub fn ssim(a: &ImageFrame, b: &ImageFrame) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// `10 log10(1 / MSE)`, or `+inf` for identical images.
pub fn psnr(a: &ImageFrame, b: &ImageFrame) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Value and components of the reconstruction loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub l1: f64,
    /// `1 - ssim`.
    pub ssim_term: f64,
    /// Gradient with respect to each value of the rendered image.
    pub grad: Vec<f64>,
}

/// `(1 - gamma) * L1 + gamma * (1 - ssim)` with its gradient with respect to `rendered`.
pub fn gs_loss(rendered: &ImageFrame, target: &ImageFrame, gamma: f64) -> Result<LossTerms> {
    rendered.check_same_shape(target)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let n = rendered.data().len();
    if rendered.data() == target.data() {
        return Ok(LossTerms {
            loss: 0.0,
            l1: 0.0,
            ssim_term: 0.0,
            grad: vec![0.0; n],
        });
    }
    let inv = 1.0 / n as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - gamma) * sign * inv
        })
        .collect();
    l1 *= inv;
    let ssim_term = if gamma > 0.0 {
        let (s, g) = ssim_impl(rendered, target, true)?;
        for (o, gs) in grad.iter_mut().zip(g.expect("gradient requested")) {
            *o -= gamma * gs;
        }
        1.0 - s
    } else {
        1.0 - ssim(rendered, target)?
    };
    Ok(LossTerms {
        loss: (1.0 - gamma) * l1 + gamma * ssim_term,
        l1,
        ssim_term,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let g = gaussian_taps();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW {
            assert_eq!(g[i], g[WINDOW - 1 - i]);
        }
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = ImageFrame::filled(4, 4, [0.5; 3]).unwrap();
        let b = ImageFrame::filled(4, 4, [0.6; 3]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }
}
