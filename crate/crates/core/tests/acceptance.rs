//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs sequentially so the timing limits are not shared with other tests.
//! Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{Matrix2, Matrix3, Rotation3, Unit, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use scenesplat::cascade::{pixel_momentum_field, cascade_blend};
use scenesplat::diffusion::*;
use scenesplat::io::tensor::Tensor;
use scenesplat::io::{write_png, write_tensor, DType};
use scenesplat::optimize::{optimize_scene, psnr, LossRecord, OptimizeConfig};
use scenesplat::pipeline::{
    make_trajectory, oracle_for_scene, run_pipeline, run_pipeline_with, window_indices,
    Provenance, RGBDInput, RunOptions, TrajectoryKind, TrajectoryParams,
};
use scenesplat::render::{render_color, render_depth, render_scale_map, ScaleMap};
use scenesplat::types::{
    dc_to_rgb, rgb_to_dc, Camera, GaussianScene, ImageFrame, PipelineConfig, ReverseStep, Trajectory,
    VideoClip,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(elapsed < limit, format!("{detail}, {:.1}s of {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 1. renderer vs an independent per-pixel oracle

const SH0: f64 = 0.282_094_791_773_878_14;

/// Real SH basis up to degree 2 in the usual graphics sign convention.
fn sh_basis(d: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (d.x, d.y, d.z);
    let c1 = 0.488_602_511_902_919_9;
    [
        SH0,
        -c1 * y,
        c1 * z,
        -c1 * x,
        1.092_548_430_592_079_2 * x * y,
        -1.092_548_430_592_079_2 * y * z,
        0.315_391_565_252_520_05 * (2.0 * z * z - x * x - y * y),
        -1.092_548_430_592_079_2 * x * z,
        0.546_274_215_296_039_6 * (x * x - y * y),
    ]
}

struct OracleSplat {
    depth: f64,
    index: usize,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    feature: [f64; 3],
}

/// Every primitive projected on its own terms: EWA covariance with 0.3 px² blur,
/// near plane 0.01.
fn oracle_splats(scene: &GaussianScene, cam: &Camera, s_max: f64) -> Vec<OracleSplat> {
    let mut out = Vec::new();
    for (index, p) in scene.primitives.iter().enumerate() {
        let t = cam.rotation * p.position + cam.translation;
        if t.z <= 0.01 {
            continue;
        }
        let [w, x, y, z] = p.rotation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w / n, x / n, y / n, z / n));
        let r = q.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&p.scale);
        let sigma = r * s * s * r.transpose();
        let j = nalgebra::Matrix2x3::new(
            cam.fx / t.z,
            0.0,
            -cam.fx * t.x / (t.z * t.z),
            0.0,
            cam.fy / t.z,
            -cam.fy * t.y / (t.z * t.z),
        );
        let cov = j * cam.rotation * sigma * cam.rotation.transpose() * j.transpose() + Matrix2::identity() * 0.3;
        let cov = (cov + cov.transpose()) * 0.5;
        let Some(conic) = cov.try_inverse() else { continue };
        if cov.determinant() <= 0.0 {
            continue;
        }
        let dir = (p.position - cam.center()).normalize();
        let b = sh_basis(&dir);
        let mut color = [0.5; 3];
        for (k, coef) in p.sh.iter().enumerate() {
            for c in 0..3 {
                color[c] += b[k] * coef[c];
            }
        }
        let mut sc: Vec<f64> = p.scale.iter().map(|v| (v / s_max).min(1.0 - 1e-6)).collect();
        sc.sort_by(|a, b| b.total_cmp(a));
        out.push(OracleSplat {
            depth: t.z,
            index,
            mean: Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy),
            conic,
            opacity: p.opacity,
            color: color.map(|v| v.max(0.0)),
            feature: [1.0 - sc[0], 1.0 - sc[1], 1.0 - sc[2]],
        });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Straight front-to-back compositing of every splat at every pixel.
fn oracle_composite(splats: &[OracleSplat], cam: &Camera, bg: [f64; 3], feature: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(cam.width * cam.height * 3);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let mut trans = 1.0;
            let mut acc = [0.0; 3];
            for s in splats {
                let d = Vector2::new(px as f64, py as f64) - s.mean;
                let m = (d.transpose() * s.conic * d)[(0, 0)];
                if !(0.0..=9.0).contains(&m) {
                    continue;
                }
                let a = s.opacity * (-0.5 * m).exp();
                if a < 1.0 / 255.0 {
                    continue;
                }
                let v = if feature { s.feature } else { s.color };
                for c in 0..3 {
                    acc[c] += v[c] * a * trans;
                }
                trans *= 1.0 - a;
                if trans < 1e-4 {
                    break;
                }
            }
            for c in 0..3 {
                out.push(acc[c] + bg[c] * trans);
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cam = camera(64, 64, 70.0);
    let bg = [0.15, 0.05, 0.3];
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(5000 + seed);
        let count = r.random_range(1..=100);
        let scene = random_scene(&mut r, &cam, count, (seed % 3) as usize);
        let s_max = r.random_range(0.1..0.3);
        let splats = oracle_splats(&scene, &cam, s_max);
        let want: Vec<f64> = oracle_composite(&splats, &cam, bg, false).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let got = render_color(&scene, &cam, bg).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(got.data(), &want));
        let want = oracle_composite(&splats, &cam, [0.0; 3], true);
        let got = render_scale_map(&scene, &cam, s_max).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(got.values(), &want));
    }
    let detail = format!("max abs diff {worst:.2e} over 20 scenes");
    check(worst <= 1e-5, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

// ---------------------------------------------------------------------------
// 2. analytic gradients vs central differences

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cam = camera(32, 32, 40.0);
    let (mut total, mut passed) = (0, 0);
    for seed in 0..20u64 {
        let mut r = rng(7000 + seed);
        let n = r.random_range(1..=10);
        let scene = random_scene(&mut r, &cam, n, (seed % 3) as usize);
        let grad: Vec<f64> = (0..32 * 32 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let c = finite_difference_check(&scene, &cam, [0.1, 0.2, 0.3], &grad, 1e-3, 1e-7);
        total += c.total;
        passed += c.passed;
    }
    let frac = passed as f64 / total as f64;
    let detail = format!("{passed}/{total} parameters ({:.2}%) within 1e-3 relative", 100.0 * frac);
    check(frac >= 0.95, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(120), detail)
}

// ---------------------------------------------------------------------------
// 3, 4, 6. latent-momentum sampling

fn random_clip(r: &mut impl Rng, w: usize, h: usize, n: usize, first: usize) -> VideoClip {
    let frames = (0..n)
        .map(|_| ImageFrame::new(w, h, (0..w * h * 3).map(|_| r.random_range(0.05..0.95)).collect()).unwrap())
        .collect();
    VideoClip::new(frames, (first..first + n).collect()).unwrap()
}

fn criterion_3() -> Outcome {
    let mut r = rng(31);
    for k in 0..100 {
        let (w, h, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..5));
        let first = r.random_range(1..30);
        let rendered = random_clip(&mut r, w, h, n, first);
        let target = IdentityCodec.encode(&random_clip(&mut r, w, h, n, first)).unwrap();
        let input = random_clip(&mut r, w, h, 1, 0).frames()[0].clone();
        let schedule = build_schedule(r.random_range(1..25), 1e-4, 0.02, r.random_bool(0.3)).unwrap();
        let noise = NoiseSource::new(r.random());
        let oracle = OracleDenoiser::new(&target);
        let settings = PhiSettings {
            lambda0: 0.0,
            n_well: r.random_range(0..=n),
            forms: StepForms::default(),
        };
        let phi = sample_phi(&rendered, &input, &settings, &IdentityCodec, &oracle, &schedule, &noise)
            .map_err(|e| e.to_string())?;
        let z = IdentityCodec.encode(&rendered).unwrap();
        let z0 = IdentityCodec.encode_frame(&input, 0).unwrap();
        let plain = ancestral_sample(&z, &oracle, &z0, &schedule, &noise, ReverseStep::Ddpm).map_err(|e| e.to_string())?;
        if !phi.latents.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Err(format!("instance {k} differs from ancestral sampling"));
        }
    }
    Ok("100 instances bit-identical".into())
}

fn criterion_4() -> Outcome {
    let mut r = rng(41);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (w, h, n) = (r.random_range(2..8), r.random_range(2..8), r.random_range(1..6));
        let clip = random_clip(&mut r, w, h, n, 1);
        let input = random_clip(&mut r, w, h, 1, 0).frames()[0].clone();
        let schedule = build_schedule(r.random_range(5..60), 1e-4, 0.02, r.random_bool(0.5)).unwrap();
        let target = IdentityCodec.encode(&random_clip(&mut r, w, h, n, 1)).unwrap();
        let settings = PhiSettings {
            lambda0: 1.0,
            n_well: n,
            forms: StepForms::default(),
        };
        let out = sample_phi(&clip, &input, &settings, &IdentityCodec, &OracleDenoiser::new(&target), &schedule, &NoiseSource::new(r.random()))
            .map_err(|e| e.to_string())?;
        for (a, b) in out.clip.frames().iter().zip(clip.frames()) {
            worst = worst.max(max_abs_diff(a.data(), b.data()));
        }
    }
    check(worst <= 1e-6, format!("max abs deviation from the input clip {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut r = rng(61);
    let schedule = build_schedule(50, 1e-4, 0.02, true).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (w, h, n) = (r.random_range(4..12), r.random_range(4..12), r.random_range(2..6));
        let rendered = random_clip(&mut r, w, h, n, 1);
        let target_clip = random_clip(&mut r, w, h, n, 1);
        let target = IdentityCodec.encode(&target_clip).unwrap();
        let settings = PhiSettings {
            lambda0: 0.0,
            n_well: 0,
            forms: StepForms::default(),
        };
        let out = sample_phi(
            &rendered,
            &rendered.frames()[0],
            &settings,
            &IdentityCodec,
            &OracleDenoiser::new(&target),
            &schedule,
            &NoiseSource::new(r.random()),
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(mean_abs_diff(out.latents.data(), target.data()));
    }
    check(worst < 0.02, format!("worst mean abs error {worst:.2e} over 5 rollouts"))
}

// ---------------------------------------------------------------------------
// 5. Gaussian-score marginals

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let steps = 200;
    let (means, std) = ([0.5, -0.25, 0.8], 0.3);
    let schedule = build_schedule(steps, 1e-4, 0.02, false).unwrap();
    let denoiser = GaussianScoreDenoiser::new(means.to_vec(), std).unwrap();
    let like = LatentVideo::new(100, 100, 3, 1, vec![1], vec![0.0; 30_000]).unwrap();
    let out = ancestral_sample(&like, &denoiser, &like, &schedule, &NoiseSource::new(5), ReverseStep::Ddpm)
        .map_err(|e| e.to_string())?;

    // moments of the linear-Gaussian reverse chain started from N(0, 1)
    let chain = |m: f64| -> (f64, f64) {
        let (mut mu, mut var) = (0.0, 1.0);
        for t in (1..=steps).rev() {
            let beta = 0.0001 + (0.02 - 0.0001) * (t - 1) as f64 / (steps - 1) as f64;
            let ab: f64 = (1..=t)
                .map(|s| 1.0 - (0.0001 + (0.02 - 0.0001) * (s - 1) as f64 / (steps - 1) as f64))
                .product();
            let k = (1.0 - ab).sqrt() / (ab * std * std + 1.0 - ab);
            let c = beta / (1.0 - ab).sqrt();
            let pre = 1.0 / (1.0 - beta).sqrt();
            let a = pre * (1.0 - c * k);
            let b = pre * c * k * ab.sqrt() * m;
            mu = a * mu + b;
            var = a * a * var + beta;
        }
        (mu, var.sqrt())
    };

    let mut lines = Vec::new();
    let mut ok = true;
    for (ch, &m) in means.iter().enumerate() {
        let xs: Vec<f64> = out.data().iter().skip(ch).step_by(3).copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let (cm, cs) = chain(m);
        for (got, want) in [(mean, m), (sd, std), (mean, cm), (sd, cs)] {
            ok &= (got - want).abs() <= 0.05 * want.abs();
        }
        lines.push(format!("ch{ch} mean {mean:.4} (data {m}, chain {cm:.4}) std {sd:.4} (data {std}, chain {cs:.4})"));
    }
    let detail = format!("10000 samples per channel: {}", lines.join("; "));
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(60), detail)
}

// ---------------------------------------------------------------------------
// 7. vectorized vs scalar transcriptions

fn criterion_7() -> Outcome {
    let mut r = rng(71);
    let mut worst_lambda = 0.0f64;
    for _ in 0..20 {
        let (h, w, c) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..9));
        let frames = r.random_range(1..5);
        let gauss = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(r)).collect()
        };
        let z = LatentVideo::new(h, w, c, 1, (1..=frames).collect(), gauss(&mut r, frames * h * w * c)).unwrap();
        let z0 = LatentVideo::new(h, w, c, 1, vec![0], gauss(&mut r, h * w * c)).unwrap();
        let n_well = r.random_range(0..=frames);
        let lambda0 = r.random_range(0.0..1.0);
        let pool = reference_pool(&z0, &z.slice_frames(0..n_well)).unwrap();
        let field = latent_momentum_coefficients(&z, &pool, lambda0).map_err(|e| e.to_string())?;
        // pool = input locations then well-generated locations
        let mut pool_vecs: Vec<&[f64]> = Vec::new();
        for j in 0..h * w {
            pool_vecs.push(&z0.data()[j * c..(j + 1) * c]);
        }
        for i in 0..n_well {
            for j in 0..h * w {
                let off = (i * h * w + j) * c;
                pool_vecs.push(&z.data()[off..off + c]);
            }
        }
        for i in 0..frames {
            for j in 0..h * w {
                let off = (i * h * w + j) * c;
                let v = &z.data()[off..off + c];
                let mut best = f64::NEG_INFINITY;
                for p in &pool_vecs {
                    let (mut dot, mut nv, mut np) = (0.0, 0.0, 0.0);
                    for k in 0..c {
                        dot += v[k] * p[k];
                        nv += v[k] * v[k];
                        np += p[k] * p[k];
                    }
                    let cos = if nv > 0.0 && np > 0.0 { dot / (nv.sqrt() * np.sqrt()) } else { 0.0 };
                    best = best.max(cos);
                }
                let want = lambda0 * best.clamp(0.0, 1.0);
                worst_lambda = worst_lambda.max((field.at(i, j) - want).abs());
            }
        }
    }

    let mut worst_mu = 0.0f64;
    let mut worst_blend = 0.0f64;
    for _ in 0..20 {
        let (w, h, n) = (r.random_range(1..9), r.random_range(1..9), r.random_range(1..4));
        let tau = r.random_range(0.0..0.99);
        let maps: Vec<ScaleMap> = (0..n)
            .map(|_| ScaleMap::new(w, h, (0..w * h * 3).map(|_| r.random_range(0.0..0.999)).collect()).unwrap())
            .collect();
        let mu = pixel_momentum_field(&maps, tau).map_err(|e| e.to_string())?;
        let a = random_clip(&mut r, w, h, n, 1);
        let b = random_clip(&mut r, w, h, n, 1);
        let blended = cascade_blend(&a, &b, &mu).map_err(|e| e.to_string())?;
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let s = maps[i].at(x, y);
                    let mut best = s[0];
                    for v in &s[1..] {
                        if *v > best {
                            best = *v;
                        }
                    }
                    let m = if best >= tau { best } else { 0.0 };
                    worst_mu = worst_mu.max((mu.frame(i)[y * w + x] - m).abs());
                    let (pa, pb, po) = (a.frames()[i].pixel(x, y), b.frames()[i].pixel(x, y), blended.frames()[i].pixel(x, y));
                    for c in 0..3 {
                        worst_blend = worst_blend.max((po[c] - (m * pa[c] + (1.0 - m) * pb[c])).abs());
                    }
                }
            }
        }
    }
    check(
        worst_lambda <= 1e-9 && worst_mu <= 1e-12 && worst_blend <= 1e-12,
        format!("latent coefficients {worst_lambda:.1e}, pixel momentum {worst_mu:.1e}, blend {worst_blend:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 8. toy reconstruction

fn criterion_8() -> Outcome {
    let mut r = rng(19);
    let base = camera(32, 32, 34.0);
    let truth = random_scene(&mut r, &base, 50, 0);
    let mut noisy = truth.clone();
    for p in &mut noisy.primitives {
        let mut z = || -> f64 { StandardNormal.sample(&mut r) };
        let local = base.world_to_camera(&p.position);
        p.position = base.camera_to_world(&local.map(|v| v * (1.0 + 0.05 * z())));
        p.scale = p.scale.map(|s| s * (1.0 + 0.05 * z()));
        p.opacity = (p.opacity * (1.0 + 0.05 * z())).clamp(0.01, 0.99);
        p.sh[0] = rgb_to_dc(dc_to_rgb(p.sh[0]).map(|c| c * (1.0 + 0.05 * z())));
    }
    let cams: Vec<Camera> = (0..4)
        .map(|k| {
            let mut c = base.clone();
            c.translation.x = 0.15 * k as f64 - 0.2;
            c.translation.y = 0.05 * (k % 2) as f64;
            c
        })
        .collect();
    let cfg = OptimizeConfig {
        steps: 2000,
        ..OptimizeConfig::default()
    };
    let sup = VideoClip::sequential(cams.iter().map(|c| render_color(&truth, c, cfg.background).unwrap()).collect())
        .unwrap();
    let start = Instant::now();
    let (fit, _) = optimize_scene(&noisy, &sup, &cams, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = cams
        .iter()
        .zip(sup.frames())
        .map(|(c, f)| psnr(&render_color(&fit, c, cfg.background).unwrap(), f).unwrap())
        .fold(f64::INFINITY, f64::min);
    let detail = format!("worst view {worst:.2} dB after 2000 steps, {} gaussians", fit.len());
    check(worst > 30.0, detail.clone())?;
    within(elapsed, Duration::from_secs(60), detail)
}

// ---------------------------------------------------------------------------
// 9. window bookkeeping

fn small_input(size: usize) -> RGBDInput {
    let cam = camera(size, size, size as f64);
    let image = ImageFrame::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        [0.2 + 0.6 * u, 0.3 + 0.4 * v, 0.6 - 0.3 * u * v]
    })
    .unwrap();
    let depth = (0..size * size).map(|k| 3.0 + 0.4 * ((k / size) as f64 / size as f64)).collect();
    RGBDInput::new(image, depth, cam).unwrap()
}

fn criterion_9() -> Outcome {
    let (m, big_n, small_n) = (70, 25, 10);
    let input = small_input(6);
    let params = TrajectoryParams {
        step: 0.01,
        ..Default::default()
    };
    let traj = make_trajectory(TrajectoryKind::Lateral, &input.camera, &params, m).unwrap();
    let cfg = PipelineConfig {
        window_len: big_n,
        overlap: small_n,
        diffusion_steps: 2,
        opt_steps: 1,
        denoiser: "zero".into(),
        ..PipelineConfig::default()
    };
    let want_windows = vec![1..=25, 16..=40, 31..=55, 46..=70];
    let got_windows: Vec<_> = (0..4).map(|s| window_indices(s, big_n, small_n)).collect();
    if got_windows != want_windows {
        return Err(format!("windows {got_windows:?}"));
    }

    // independent simulation: ordinary sets, windows stepped by N - n
    let mut sim: BTreeSet<usize> = [0].into();
    let mut sizes = Vec::new();
    for s in 0..4 {
        let first = 1 + s * (big_n - small_n);
        if s > 0 {
            sim = sim.difference(&(first..first + small_n).collect()).copied().collect();
        }
        sim.extend(first..first + big_n);
        let opts = RunOptions {
            stop_after: Some(s + 1),
            ..Default::default()
        };
        let out = run_pipeline_with(&input, &traj, &cfg, &ZeroDenoiser, &IdentityCodec, &opts).map_err(|e| e.to_string())?;
        let got: BTreeSet<usize> = out.store.indices().collect();
        if got != sim {
            return Err(format!("store after iteration {s} differs from the simulation"));
        }
        if out.store.input().provenance != Provenance::Input {
            return Err("frame 0 lost its input provenance".into());
        }
        if out.windows != want_windows {
            return Err(format!("pipeline windows {:?}", out.windows));
        }
        sizes.push(out.store.len());
    }
    check(sizes == [26, 41, 56, 71], format!("windows {want_windows:?}, store sizes {sizes:?}"))
}

// ---------------------------------------------------------------------------
// 10. consistent vs hue-shifted supervision

/// Rotation of RGB about the gray axis.
fn hue_rotation(degrees: f64) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::new(1.0, 1.0, 1.0));
    *Rotation3::from_axis_angle(&axis, degrees.to_radians()).matrix()
}

fn hue_shift(frame: &ImageFrame, degrees: f64) -> ImageFrame {
    let m = hue_rotation(degrees);
    let data = frame
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            let v = m * Vector3::new(p[0], p[1], p[2]);
            [v.x, v.y, v.z].map(|c| c.clamp(0.0, 1.0))
        })
        .collect();
    ImageFrame::new(frame.width(), frame.height(), data).unwrap()
}

/// Mean loss over the last full pass through the supervision frames.
fn terminal_loss(history: &[LossRecord]) -> f64 {
    let frames: BTreeSet<usize> = history.iter().map(|r| r.frame_index).collect();
    let tail = &history[history.len() - frames.len()..];
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
}

struct Fig6Setup {
    input: RGBDInput,
    trajectory: Trajectory,
    truth: GaussianScene,
}

fn fig6_setup(seed: u64) -> Fig6Setup {
    let size = 24;
    let cam = camera(size, size, 26.0);
    let mut r = rng(9000 + seed);
    let mut truth = grid_scene(&cam, 6, 6, (-8.0, size as f64 + 8.0), 6.0, 0.95);
    truth.primitives.extend(random_scene(&mut r, &cam, 40, 0).primitives);
    let bg = PipelineConfig::default().background;
    let image = render_color(&truth, &cam, bg).unwrap();
    let (depth, _) = render_depth(&truth, &cam).unwrap();
    let input = RGBDInput::new(image, depth, cam.clone()).unwrap();
    let params = TrajectoryParams {
        step: 0.04,
        ..Default::default()
    };
    let trajectory = make_trajectory(TrajectoryKind::Lateral, &cam, &params, 14).unwrap();
    Fig6Setup {
        input,
        trajectory,
        truth,
    }
}

fn fig6_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        window_len: 6,
        overlap: 2,
        diffusion_steps: 20,
        opt_steps: 300,
        init_stride: 1,
        seed,
        ..PipelineConfig::default()
    }
}

fn fig6_run(setup: &Fig6Setup, cfg: &PipelineConfig, shifted: bool) -> Result<Vec<f64>, String> {
    let bg = cfg.background;
    let oracle = if shifted {
        let clip = scenesplat::render::render_video_indexed(&setup.truth, &setup.trajectory, bg, 1).unwrap();
        let frames: Vec<ImageFrame> = clip
            .frames()
            .iter()
            .enumerate()
            .map(|(k, f)| hue_shift(f, 35.0 * ((k * 7 % 5) as f64 - 2.0)))
            .collect();
        let clip = VideoClip::new(frames, clip.frame_indices().to_vec()).unwrap();
        OracleDenoiser::new(&IdentityCodec.encode(&clip).unwrap())
    } else {
        oracle_for_scene(&setup.truth, &setup.trajectory, bg, &IdentityCodec).map_err(|e| e.to_string())?
    };
    let out = run_pipeline(&setup.input, &setup.trajectory, cfg, &oracle, &IdentityCodec).map_err(|e| e.to_string())?;
    Ok(out.histories.iter().map(|h| terminal_loss(h)).collect())
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let setup = fig6_setup(seed);
        let cfg = fig6_config(seed);
        let consistent = fig6_run(&setup, &cfg, false)?;
        let shifted = fig6_run(&setup, &cfg, true)?;
        let (first, last) = (consistent[0], *consistent.last().unwrap());
        let last_shifted = *shifted.last().unwrap();
        ok &= last <= 1.2 * first && last_shifted > last;
        lines.push(format!(
            "seed {seed}: consistent {first:.4} -> {last:.4} ({:.2}x), hue-shifted final {last_shifted:.4}",
            last / first
        ));
    }
    let detail = lines.join("; ");
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(600), detail)
}

// ---------------------------------------------------------------------------
// 11. CLI determinism

fn write_run_inputs(dir: &Path) {
    let size = 16;
    let input = small_input(size);
    write_png(&dir.join("image.png"), &input.image).unwrap();
    let depth = Tensor::new(vec![size, size], input.depth.clone()).unwrap();
    write_tensor(&dir.join("depth.sstf"), &depth, DType::F32).unwrap();
    let cfg = PipelineConfig {
        window_len: 6,
        overlap: 2,
        diffusion_steps: 10,
        opt_steps: 60,
        densify_interval: 20,
        init_stride: 2,
        trajectory_count: 10,
        trajectory_step: 0.03,
        input_image: Some("image.png".into()),
        input_depth: Some("depth.sstf".into()),
        input_focal: Some(size as f64),
        seed: 1234,
        ..PipelineConfig::default()
    };
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()).unwrap();
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_run_inputs(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_scenesplat"))
            .arg("run")
            .arg("--config")
            .arg(dir.path().join("config.toml"))
            .arg("--output-dir")
            .arg(&out_dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {name} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(out_dir.join("scene.ply")).map_err(|e| e.to_string())?);
    }
    check(
        outputs[0] == outputs[1],
        format!("scene.ply {} and {} bytes, identical: {}", outputs[0].len(), outputs[1].len(), outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("renderer matches per-pixel oracle", criterion_1),
        ("analytic gradients match finite differences", criterion_2),
        ("zero momentum equals ancestral sampling", criterion_3),
        ("full momentum is a fixed point", criterion_4),
        ("gaussian-score marginals", criterion_5),
        ("oracle rollout recovers targets", criterion_6),
        ("vectorized momentum matches scalar transcription", criterion_7),
        ("toy scene reconstruction", criterion_8),
        ("window bookkeeping", criterion_9),
        ("consistent vs hue-shifted supervision", criterion_10),
        ("CLI runs are byte-identical", criterion_11),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {id}: {name} ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
