mod common;

use common::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use scenesplat::diffusion::*;
use scenesplat::types::{ImageFrame, MomentumNoise, ReverseStep, VideoClip};

fn random_latent(r: &mut impl Rng, frames: usize, h: usize, w: usize, c: usize) -> LatentVideo {
    let data = (0..frames * h * w * c).map(|_| r.sample(StandardNormal)).collect();
    LatentVideo::new(h, w, c, 1, (1..=frames).collect(), data).unwrap()
}

fn schedule(t: usize, deterministic: bool) -> NoiseSchedule {
    build_schedule(t, 1e-4, 0.02, deterministic).unwrap()
}

#[test]
fn q_sample_edges() {
    let mut r = rng(1);
    let z0 = random_latent(&mut r, 2, 3, 3, 2);
    let s = schedule(20, false);
    let zero = vec![0.0; z0.data().len()];
    let z = q_sample(&z0, 7, &zero, &s).unwrap();
    for (a, b) in z.data().iter().zip(z0.data()) {
        assert_eq!(*a, s.alpha_bar(7).sqrt() * b);
    }
    let eps: Vec<f64> = (0..z0.data().len()).map(|_| r.sample(StandardNormal)).collect();
    assert_eq!(q_sample(&z0, 0, &eps, &s).unwrap(), z0);
    assert!(q_sample(&z0, 3, &eps[1..], &s).is_err());
}

#[test]
fn q_sample_monte_carlo_marginal() {
    let s = schedule(50, false);
    let t = 30;
    let z0 = LatentVideo::new(1, 1, 2, 1, vec![1], vec![0.7, -1.3]).unwrap();
    let noise = NoiseSource::new(5);
    let draws = 10_000;
    let mut samples = vec![Vec::with_capacity(draws); 2];
    for k in 0..draws {
        let eps = noise.normal(k, t, NoiseTag::Forward, 2);
        let z = q_sample(&z0, t, &eps, &s).unwrap();
        for ch in 0..2 {
            samples[ch].push(z.data()[ch]);
        }
    }
    let ab = s.alpha_bar(t);
    for ch in 0..2 {
        let n = draws as f64;
        let mean = samples[ch].iter().sum::<f64>() / n;
        let var = samples[ch].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want_var = 1.0 - ab;
        let se_mean = (want_var / n).sqrt();
        let se_var = want_var * (2.0 / (n - 1.0)).sqrt();
        assert!((mean - ab.sqrt() * z0.data()[ch]).abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - want_var).abs() < 3.0 * se_var, "var {var}");
    }
}

#[test]
fn zero_denoiser_step_is_pure_rescale() {
    let mut r = rng(2);
    let z = random_latent(&mut r, 2, 2, 2, 3);
    let s = schedule(10, true);
    let noise = NoiseSource::new(0);
    let cond = z.slice_frames(0..1);
    let printed = vanilla_reverse_step(&z, 6, &ZeroDenoiser, &cond, &s, &noise, ReverseStep::CumulativePrefactor).unwrap();
    let ddpm = vanilla_reverse_step(&z, 6, &ZeroDenoiser, &cond, &s, &noise, ReverseStep::Ddpm).unwrap();
    for ((p, d), x) in printed.data().iter().zip(ddpm.data()).zip(z.data()) {
        assert!((p - x / s.alpha_bar(6).sqrt()).abs() < 1e-15);
        assert!((d - x / (1.0 - s.beta(6)).sqrt()).abs() < 1e-15);
    }
}

/// Oracle rollout, checked against the composition of its per-step affine maps.
#[test]
fn oracle_rollout_matches_composed_affine_maps() {
    for form in [ReverseStep::Ddpm, ReverseStep::CumulativePrefactor] {
        let mut r = rng(3);
        let target = random_latent(&mut r, 3, 4, 4, 3);
        let s = schedule(50, true);
        let noise = NoiseSource::new(11);
        let oracle = OracleDenoiser::new(&target);
        let out = ancestral_sample(&target, &oracle, &target.slice_frames(0..1), &s, &noise, form).unwrap();

        // z_{t-1} = p_t (z_t - k_t (z_t - a_t x) / s_t)  =>  z_0 = A z_T + B x
        let (mut a_coef, mut b_coef) = (1.0f64, 0.0f64);
        for t in (1..=50).rev() {
            let ab: f64 = s.alpha_bar(t);
            let p = match form {
                ReverseStep::Ddpm => 1.0 / (1.0 - s.beta(t)).sqrt(),
                ReverseStep::CumulativePrefactor => 1.0 / ab.sqrt(),
            };
            let k = s.beta(t) / (1.0 - ab).sqrt();
            let g = k / (1.0 - ab).sqrt();
            a_coef *= p * (1.0 - g);
            b_coef = p * (1.0 - g) * b_coef + p * g * ab.sqrt();
        }
        let z_t = initial_latent(&target, &s, &noise).unwrap();
        let mut worst = 0.0f64;
        for ((o, z), x) in out.data().iter().zip(z_t.data()).zip(target.data()) {
            assert!((o - (a_coef * z + b_coef * x)).abs() < 1e-9 * (1.0 + o.abs()));
            worst = worst.max((o - x).abs());
        }
        assert!(worst < 0.05, "{form:?}: {worst}");
    }
}

#[test]
fn reverse_step_is_deterministic_per_seed() {
    let mut r = rng(4);
    let z = random_latent(&mut r, 2, 3, 3, 3);
    let s = schedule(10, false);
    let cond = z.slice_frames(0..1);
    let run = |seed| {
        vanilla_reverse_step(&z, 5, &ZeroDenoiser, &cond, &s, &NoiseSource::new(seed), ReverseStep::Ddpm).unwrap()
    };
    assert_eq!(run(9).data(), run(9).data());
    assert_ne!(run(9).data(), run(10).data());
}

#[test]
fn reverse_step_rejects_bad_timesteps_and_shapes() {
    struct Short;
    impl Denoiser for Short {
        fn predict(&self, z: &LatentVideo, _: usize, _: &LatentVideo, _: &NoiseSchedule) -> scenesplat::Result<Vec<f64>> {
            Ok(vec![0.0; z.data().len() - 1])
        }
    }
    let mut r = rng(5);
    let z = random_latent(&mut r, 1, 2, 2, 3);
    let s = schedule(5, true);
    let n = NoiseSource::new(0);
    assert!(vanilla_reverse_step(&z, 0, &ZeroDenoiser, &z, &s, &n, ReverseStep::Ddpm).is_err());
    assert!(vanilla_reverse_step(&z, 6, &ZeroDenoiser, &z, &s, &n, ReverseStep::Ddpm).is_err());
    let err = vanilla_reverse_step(&z, 3, &Short, &z, &s, &n, ReverseStep::Ddpm).unwrap_err();
    assert!(matches!(err, scenesplat::Error::Contract(_)), "{err}");
}

#[test]
fn pool_sizes() {
    let mut r = rng(6);
    let z0 = random_latent(&mut r, 1, 4, 4, 3);
    let z = random_latent(&mut r, 5, 4, 4, 3);
    assert_eq!(reference_pool(&z0, &z.slice_frames(0..0)).unwrap().len(), 16);
    assert_eq!(reference_pool(&z0, &z.slice_frames(0..2)).unwrap().len(), 48);
    let dup = LatentVideo::new(4, 4, 3, 1, vec![1, 2], [z.frame(0), z.frame(0)].concat()).unwrap();
    assert_eq!(reference_pool(&z0, &dup).unwrap().len(), 48);
}

fn brute_force_lambda(z: &LatentVideo, pool_vectors: &[Vec<f64>], lambda0: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..z.frames() {
        for j in 0..z.locations() {
            let v = z.vector(i, j);
            let mut best = f64::NEG_INFINITY;
            for p in pool_vectors {
                let mut d = 0.0;
                let mut nv = 0.0;
                let mut np = 0.0;
                for c in 0..v.len() {
                    d += v[c] * p[c];
                    nv += v[c] * v[c];
                    np += p[c] * p[c];
                }
                let cos = if nv == 0.0 || np == 0.0 { 0.0 } else { d / (nv.sqrt() * np.sqrt()) };
                best = best.max(cos);
            }
            out.push(lambda0 * best.clamp(0.0, 1.0));
        }
    }
    out
}

#[test]
fn momentum_coefficients_match_brute_force() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let z = random_latent(&mut r, 3, 2, 2, 8);
        let z0 = random_latent(&mut r, 1, 2, 2, 8);
        let pool = reference_pool(&z0, &z.slice_frames(0..1)).unwrap();
        let vectors: Vec<Vec<f64>> = (0..pool.len()).map(|k| pool.vector(k).to_vec()).collect();
        let field = latent_momentum_coefficients(&z, &pool, 0.8).unwrap();
        let want = brute_force_lambda(&z, &vectors, 0.8);
        for (a, b) in field.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
            assert!((0.0..=0.8).contains(a));
        }
        // frame 1 is in the pool, so its locations hit lambda0 exactly
        for j in 0..4 {
            assert_eq!(field.at(0, j), 0.8);
        }
        // a larger pool never lowers a coefficient
        let bigger = reference_pool(&z0, &z.slice_frames(0..3)).unwrap();
        let field2 = latent_momentum_coefficients(&z, &bigger, 0.8).unwrap();
        assert!(field2.values().iter().zip(field.values()).all(|(b, a)| b >= a));
    }
}

#[test]
fn orthogonal_and_zero_vectors_get_no_momentum() {
    let z = LatentVideo::new(1, 2, 2, 1, vec![1], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let z0 = LatentVideo::new(1, 1, 2, 1, vec![0], vec![1.0, 0.0]).unwrap();
    let pool = reference_pool(&z0, &z.slice_frames(0..0)).unwrap();
    let f = latent_momentum_coefficients(&z, &pool, 0.9).unwrap();
    assert_eq!(f.values(), &[0.0, 0.0]);
}

fn random_step_instance(r: &mut impl Rng) -> (LatentVideo, LatentVideo, LatentVideo, usize, u64) {
    let frames = r.random_range(1..4);
    let (h, w, c) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
    let z = random_latent(r, frames, h, w, c);
    let anchor = random_latent(r, frames, h, w, c);
    let target = random_latent(r, frames, h, w, c);
    (z, anchor, target, r.random_range(1..=20), r.random())
}

#[test]
fn zero_momentum_is_bit_identical_to_vanilla() {
    let s = schedule(20, false);
    let mut r = rng(7);
    for _ in 0..100 {
        let (z, anchor, target, t, seed) = random_step_instance(&mut r);
        let oracle = OracleDenoiser::new(&target);
        let noise = NoiseSource::new(seed);
        let lambda = LatentMomentumField::constant(z.frames(), z.locations(), 0.0).unwrap();
        let forms = StepForms::default();
        let m = momentum_reverse_step(&z, t, &anchor, &lambda, &oracle, &anchor, &s, &noise, forms).unwrap();
        let v = vanilla_reverse_step(&z, t, &oracle, &anchor, &s, &noise, forms.reverse).unwrap();
        assert!(m.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn full_momentum_at_last_step_recovers_anchor() {
    let s = schedule(20, false);
    let mut r = rng(8);
    for noise_form in [MomentumNoise::AsPrinted, MomentumNoise::ForwardConsistent] {
        let (z, anchor, target, _, seed) = random_step_instance(&mut r);
        let lambda = LatentMomentumField::constant(z.frames(), z.locations(), 1.0).unwrap();
        let forms = StepForms {
            reverse: ReverseStep::Ddpm,
            momentum_noise: noise_form,
        };
        let oracle = OracleDenoiser::new(&target);
        let out =
            momentum_reverse_step(&z, 1, &anchor, &lambda, &oracle, &anchor, &s, &NoiseSource::new(seed), forms).unwrap();
        assert_eq!(out.data(), anchor.data());
    }
}

#[test]
fn half_momentum_matches_scalar_transcription() {
    let s = schedule(20, false);
    let mut r = rng(9);
    for noise_form in [MomentumNoise::AsPrinted, MomentumNoise::ForwardConsistent] {
        for form in [ReverseStep::Ddpm, ReverseStep::CumulativePrefactor] {
            let (z, anchor, target, t, seed) = random_step_instance(&mut r);
            let t = t.max(2);
            let noise = NoiseSource::new(seed);
            let lambda = LatentMomentumField::constant(z.frames(), z.locations(), 0.5).unwrap();
            let forms = StepForms {
                reverse: form,
                momentum_noise: noise_form,
            };
            let oracle = OracleDenoiser::new(&target);
            let out = momentum_reverse_step(&z, t, &anchor, &lambda, &oracle, &anchor, &s, &noise, forms).unwrap();

            let n = z.frame_len();
            let mut eps = Vec::new();
            let mut eps_t = Vec::new();
            for &f in z.frame_indices() {
                eps.extend(noise.normal(f, t, NoiseTag::Anchor, n));
                eps_t.extend(noise.normal(f, t, NoiseTag::Step, n));
            }
            let ab = s.alpha_bar(t);
            let ab_prev = s.alpha_bar(t - 1);
            let beta = s.beta(t);
            for i in 0..z.data().len() {
                let zt = z.data()[i];
                let eps_hat = (zt - ab.sqrt() * target.data()[i]) / (1.0 - ab).sqrt();
                let pre = match form {
                    ReverseStep::Ddpm => 1.0 / (1.0 - beta).sqrt(),
                    ReverseStep::CumulativePrefactor => 1.0 / ab.sqrt(),
                };
                let vanilla = pre * (zt - beta / (1.0 - ab).sqrt() * eps_hat) + beta.sqrt() * eps_t[i];
                let coef = match noise_form {
                    MomentumNoise::AsPrinted => 1.0 - ab_prev.sqrt(),
                    MomentumNoise::ForwardConsistent => (1.0 - ab_prev).sqrt(),
                };
                let anchor_term = ab_prev.sqrt() * anchor.data()[i] + coef * eps[i];
                let want = 0.5 * anchor_term + 0.5 * vanilla;
                assert!((out.data()[i] - want).abs() < 1e-9);
            }
        }
    }
}

fn smooth_clip(w: usize, h: usize, count: usize, phase: f64) -> VideoClip {
    let frames = (0..count)
        .map(|f| {
            ImageFrame::from_fn(w, h, |x, y| {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                let p = phase + f as f64 * 0.1;
                [0.2 + 0.5 * u, 0.15 + 0.6 * v * (1.0 - 0.3 * p), 0.9 - 0.5 * u * v]
            })
            .unwrap()
        })
        .collect();
    VideoClip::new(frames, (1..=count).collect()).unwrap()
}

#[test]
fn sample_phi_full_momentum_is_a_fixed_point() {
    let clip = smooth_clip(8, 6, 4, 0.0);
    let input = smooth_clip(8, 6, 1, 0.7).frames()[0].clone();
    let s = schedule(30, true);
    let settings = PhiSettings {
        lambda0: 1.0,
        n_well: 4,
        forms: StepForms::default(),
    };
    let out = sample_phi(&clip, &input, &settings, &IdentityCodec, &ZeroDenoiser, &s, &NoiseSource::new(3)).unwrap();
    assert!(out.lambda.values().iter().all(|l| *l == 1.0));
    for (a, b) in out.clip.frames().iter().zip(clip.frames()) {
        let d = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d <= 1e-6, "{d}");
    }
}

#[test]
fn sample_phi_without_momentum_is_ancestral_sampling() {
    let s = schedule(15, false);
    for seed in 0..5 {
        let clip = smooth_clip(4, 4, 3, seed as f64);
        let input = clip.frames()[0].clone();
        let target = IdentityCodec.encode(&smooth_clip(4, 4, 3, 0.5)).unwrap();
        let oracle = OracleDenoiser::new(&target);
        let noise = NoiseSource::new(seed);
        let settings = PhiSettings {
            lambda0: 0.0,
            n_well: 1,
            forms: StepForms::default(),
        };
        let phi = sample_phi(&clip, &input, &settings, &IdentityCodec, &oracle, &s, &noise).unwrap();
        let z = IdentityCodec.encode(&clip).unwrap();
        let z0 = IdentityCodec.encode_frame(&input, 0).unwrap();
        let plain = ancestral_sample(&z, &oracle, &z0, &s, &noise, ReverseStep::Ddpm).unwrap();
        assert!(phi.latents.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn sample_phi_oracle_recovers_target() {
    let clip = smooth_clip(8, 8, 5, 0.0);
    let z = IdentityCodec.encode(&clip).unwrap();
    let s = schedule(50, true);
    let settings = PhiSettings {
        lambda0: 0.0,
        n_well: 0,
        forms: StepForms::default(),
    };
    let out = sample_phi(&clip, &clip.frames()[0], &settings, &IdentityCodec, &OracleDenoiser::new(&z), &s, &NoiseSource::new(1))
        .unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for (a, b) in out.clip.frames().iter().zip(clip.frames()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            sum += (x - y).abs();
            n += 1;
        }
    }
    assert!(sum / (n as f64) < 0.02);
}

#[test]
fn gaussian_denoiser_edge_cases() {
    let s = schedule(50, true);
    let mut r = rng(10);
    let mean = random_latent(&mut r, 1, 2, 2, 3);
    let z = random_latent(&mut r, 1, 2, 2, 3);
    let narrow = GaussianScoreDenoiser::new(mean.data().to_vec(), 0.0).unwrap();
    let oracle = OracleDenoiser::new(&mean);
    for t in [1, 10, 50] {
        let a = narrow.predict(&z, t, &z, &s).unwrap();
        let b = oracle.predict(&z, t, &z, &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }
    // abar -> 1 drives the prediction to zero
    let tiny = build_schedule(1, 1e-12, 1e-12, true).unwrap();
    let wide = GaussianScoreDenoiser::new(vec![0.3], 0.5).unwrap();
    let p = wide.predict(&z, 1, &z, &tiny).unwrap();
    for (pi, zi) in p.iter().zip(z.data()) {
        let want = (zi - 0.3) * (1e-12f64).sqrt() / 0.25;
        // 1 - abar carries ~1e-4 relative rounding at this scale
        assert!((pi - want).abs() < 1e-3 * want.abs());
        assert!(pi.abs() < 1e-4);
    }
}

#[test]
fn oracle_inverts_forward_noise() {
    let s = schedule(50, false);
    let mut r = rng(11);
    let target = random_latent(&mut r, 2, 3, 3, 3);
    let eps: Vec<f64> = (0..target.data().len()).map(|_| r.sample(StandardNormal)).collect();
    let oracle = OracleDenoiser::new(&target);
    for t in [1, 25, 50] {
        let z = q_sample(&target, t, &eps, &s).unwrap();
        let pred = oracle.predict(&z, t, &target, &s).unwrap();
        for (p, e) in pred.iter().zip(&eps) {
            assert!((p - e).abs() < 1e-9);
        }
    }
    let missing = LatentVideo::new(3, 3, 3, 1, vec![99], vec![0.0; 27]).unwrap();
    assert!(oracle.predict(&missing, 3, &missing, &s).is_err());
}

#[test]
fn untrained_toy_denoiser_is_its_initialization() {
    let s = schedule(10, false);
    let data = LatentVideo::new(2, 2, 3, 1, vec![1], vec![0.4; 12]).unwrap();
    let opts = TrainOptions {
        epochs: 0,
        ..TrainOptions::default()
    };
    let (model, history) = train_toy_denoiser(&data, &s, &opts).unwrap();
    assert!(history.is_empty());
    assert_eq!(model, AffineDenoiser::zeros(10, 12));
}

#[test]
fn toy_denoiser_reaches_oracle_loss_on_constant_latent() {
    let s = schedule(20, false);
    let data = LatentVideo::new(2, 2, 3, 1, vec![1], vec![0.4, -0.2, 0.9, 0.4, -0.2, 0.9, 0.1, 0.1, 0.1, -0.5, 0.0, 0.3]).unwrap();
    let opts = TrainOptions {
        epochs: 30,
        pairs_per_step: 16,
        learning_rate: 0.25,
        seed: 4,
    };
    let (model, history) = train_toy_denoiser(&data, &s, &opts).unwrap();
    // non-increasing after a window-10 moving average
    let smoothed: Vec<f64> = history.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    assert!(smoothed.windows(2).all(|w| w[1] <= w[0]), "{history:?}");

    let trained = denoising_loss(&model, &data, &s, 16, 99).unwrap();
    let oracle = denoising_loss(&OracleDenoiser::new(&data), &data, &s, 16, 99).unwrap();
    let untrained = denoising_loss(&ZeroDenoiser, &data, &s, 16, 99).unwrap();
    assert!(trained <= 1.1 * oracle + 1e-9, "trained {trained} oracle {oracle}");
    assert!(untrained > 0.5);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    model.save(&path).unwrap();
    assert_eq!(AffineDenoiser::load(&path).unwrap(), model);
}
