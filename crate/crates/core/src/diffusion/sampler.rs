use rayon::prelude::*;

use super::denoiser::Denoiser;
use super::latent::{LatentCodec, LatentVideo};
use super::noise::{NoiseSource, NoiseTag};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::types::{ImageFrame, MomentumNoise, ReverseStep, VideoClip};

/// Per-frame, per-location momentum weights in `[0, lambda0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMomentumField {
    frames: usize,
    locations: usize,
    values: Vec<f64>,
}

impl LatentMomentumField {
    pub fn new(frames: usize, locations: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * locations {
            return Err(Error::shape(format!(
                "momentum field has {} values for {frames} frames x {locations} locations",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("momentum weights must lie in [0, 1]"));
        }
        Ok(Self {
            frames,
            locations,
            values,
        })
    }

    pub fn constant(frames: usize, locations: usize, value: f64) -> Result<Self> {
        Self::new(frames, locations, vec![value; frames * locations])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, frame: usize, location: usize) -> f64 {
        self.values[frame * self.locations + location]
    }
}

/// Flat collection of `C`-vectors that momentum coefficients are measured against.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePool {
    channels: usize,
    vectors: Vec<f64>,
}

impl ReferencePool {
    pub fn len(&self) -> usize {
        self.vectors.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.channels..(k + 1) * self.channels]
    }
}

/// Every location vector of `input` followed by every location vector of `well_generated`. No dedup.
pub fn reference_pool(input: &LatentVideo, well_generated: &LatentVideo) -> Result<ReferencePool> {
    if input.channels() != well_generated.channels() {
        return Err(Error::shape(format!(
            "pool channels differ: {} vs {}",
            input.channels(),
            well_generated.channels()
        )));
    }
    let mut vectors = input.data().to_vec();
    vectors.extend_from_slice(well_generated.data());
    Ok(ReferencePool {
        channels: input.channels(),
        vectors,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `lambda0 * clamp(max over the pool of cos(z, p), 0, 1)` for every location of every frame.
pub fn latent_momentum_coefficients(z: &LatentVideo, pool: &ReferencePool, lambda0: f64) -> Result<LatentMomentumField> {
    if !(0.0..=1.0).contains(&lambda0) {
        return Err(Error::invalid(format!("lambda0 {lambda0} outside [0, 1]")));
    }
    if pool.is_empty() {
        return Err(Error::invalid("reference pool is empty"));
    }
    if pool.channels() != z.channels() {
        return Err(Error::shape(format!(
            "latent has {} channels, pool has {}",
            z.channels(),
            pool.channels()
        )));
    }
    let pool_sq: Vec<f64> = (0..pool.len()).map(|k| dot(pool.vector(k), pool.vector(k))).collect();
    let (frames, locs) = (z.frames(), z.locations());
    let values: Vec<f64> = (0..frames * locs)
        .into_par_iter()
        .map(|idx| {
            let v = z.vector(idx / locs, idx % locs);
            let vv = dot(v, v);
            if vv == 0.0 {
                return 0.0;
            }
            let best = (0..pool.len())
                .filter(|&k| pool_sq[k] > 0.0)
                .map(|k| dot(v, pool.vector(k)) / (vv * pool_sq[k]).sqrt())
                .fold(0.0f64, f64::max);
            lambda0 * best.min(1.0)
        })
        .collect();
    LatentMomentumField::new(frames, locs, values)
}

/// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`, for `0 <= t <= T`.
pub fn q_sample(z0: &LatentVideo, t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<LatentVideo> {
    if t > schedule.steps() {
        return Err(Error::invalid(format!("timestep {t} outside 0..={}", schedule.steps())));
    }
    if eps.len() != z0.data().len() {
        return Err(Error::shape(format!(
            "noise has {} values, latent has {}",
            eps.len(),
            z0.data().len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    z0.with_data(z0.data().iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

fn predict(
    denoiser: &dyn Denoiser,
    z_t: &LatentVideo,
    t: usize,
    condition: &LatentVideo,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let eps = denoiser.predict(z_t, t, condition, schedule)?;
    if eps.len() != z_t.data().len() {
        return Err(Error::Contract(format!(
            "denoiser returned {} values for a latent of {} at timestep {t}",
            eps.len(),
            z_t.data().len()
        )));
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::Denoiser {
            timestep: t,
            message: "prediction contains non-finite values".into(),
        });
    }
    Ok(eps)
}

fn step_noise(z: &LatentVideo, t: usize, tag: NoiseTag, noise: &NoiseSource) -> Option<Vec<f64>> {
    (t > 1).then(|| noise.normal_frames(z.frame_indices(), t, tag, z.frame_len()))
}

/// One ancestral step `z_t -> z_{t-1}`; the `eps_t` draw is zero at `t = 1`.
pub fn vanilla_reverse_step(
    z_t: &LatentVideo,
    t: usize,
    denoiser: &dyn Denoiser,
    condition: &LatentVideo,
    schedule: &NoiseSchedule,
    noise: &NoiseSource,
    form: ReverseStep,
) -> Result<LatentVideo> {
    schedule.check_step(t)?;
    let eps_hat = predict(denoiser, z_t, t, condition, schedule)?;
    let beta = schedule.beta(t);
    let prefactor = match form {
        ReverseStep::Ddpm => 1.0 / schedule.alpha(t).sqrt(),
        ReverseStep::CumulativePrefactor => 1.0 / schedule.alpha_bar(t).sqrt(),
    };
    let k = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = schedule.sigma(t);
    let mut out: Vec<f64> = z_t
        .data()
        .iter()
        .zip(&eps_hat)
        .map(|(z, e)| prefactor * (z - k * e))
        .collect();
    if sigma > 0.0 {
        if let Some(eps) = step_noise(z_t, t, NoiseTag::Step, noise) {
            for (o, e) in out.iter_mut().zip(eps) {
                *o += sigma * e;
            }
        }
    }
    z_t.with_data(out)
}

/// How the two branches of a momentum step are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepForms {
    pub reverse: ReverseStep,
    pub momentum_noise: MomentumNoise,
}

/// Convex per-location blend of the noised anchor with the vanilla step.
#[allow(clippy::too_many_arguments)]
pub fn momentum_reverse_step(
    z_t: &LatentVideo,
    t: usize,
    anchor: &LatentVideo,
    lambda: &LatentMomentumField,
    denoiser: &dyn Denoiser,
    condition: &LatentVideo,
    schedule: &NoiseSchedule,
    noise: &NoiseSource,
    forms: StepForms,
) -> Result<LatentVideo> {
    anchor.check_same_shape(z_t, "momentum anchor")?;
    if lambda.frames() != z_t.frames() || lambda.locations() != z_t.locations() {
        return Err(Error::shape(format!(
            "momentum field {}x{} does not match latent {}x{}",
            lambda.frames(),
            lambda.locations(),
            z_t.frames(),
            z_t.locations()
        )));
    }
    let vanilla = vanilla_reverse_step(z_t, t, denoiser, condition, schedule, noise, forms.reverse)?;
    let ab_prev = schedule.alpha_bar(t - 1);
    let a = ab_prev.sqrt();
    let c = match forms.momentum_noise {
        MomentumNoise::AsPrinted => 1.0 - ab_prev.sqrt(),
        MomentumNoise::ForwardConsistent => (1.0 - ab_prev).sqrt(),
    };
    let eps = step_noise(z_t, t, NoiseTag::Anchor, noise);
    let ch = z_t.channels();
    let locs = z_t.locations();
    let out = vanilla
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let l = lambda.values()[idx / ch];
            if l == 0.0 {
                return v;
            }
            let e = eps.as_ref().map_or(0.0, |e| e[idx]);
            let m = a * anchor.data()[idx] + c * e;
            if l == 1.0 {
                m
            } else {
                l * m + (1.0 - l) * v
            }
        })
        .collect();
    debug_assert_eq!(lambda.values().len(), z_t.frames() * locs);
    z_t.with_data(out)
}

/// Pure-noise starting latent `Z_T` shaped like `like`.
pub fn initial_latent(like: &LatentVideo, schedule: &NoiseSchedule, noise: &NoiseSource) -> Result<LatentVideo> {
    like.with_data(noise.normal_frames(like.frame_indices(), schedule.steps(), NoiseTag::Initial, like.frame_len()))
}

/// Plain ancestral sampling from `Z_T` down to `Z_0`.
pub fn ancestral_sample(
    like: &LatentVideo,
    denoiser: &dyn Denoiser,
    condition: &LatentVideo,
    schedule: &NoiseSchedule,
    noise: &NoiseSource,
    form: ReverseStep,
) -> Result<LatentVideo> {
    let mut z = initial_latent(like, schedule, noise)?;
    for t in (1..=schedule.steps()).rev() {
        z = vanilla_reverse_step(&z, t, denoiser, condition, schedule, noise, form)?;
    }
    Ok(z)
}

#[derive(Clone, Copy, Debug)]
pub struct PhiSettings {
    pub lambda0: f64,
    /// Leading rendered frames admitted to the reference pool.
    pub n_well: usize,
    pub forms: StepForms,
}

#[derive(Clone, Debug)]
pub struct PhiOutput {
    pub clip: VideoClip,
    pub latents: LatentVideo,
    pub lambda: LatentMomentumField,
}

/// Latent-momentum video sampling over one window. `lambda0 = 0` gives the free generator.
pub fn sample_phi(
    rendered: &VideoClip,
    input_image: &ImageFrame,
    settings: &PhiSettings,
    codec: &dyn LatentCodec,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    noise: &NoiseSource,
) -> Result<PhiOutput> {
    if settings.n_well > rendered.len() {
        return Err(Error::invalid(format!(
            "n_well {} exceeds window length {}",
            settings.n_well,
            rendered.len()
        )));
    }
    let z = codec.encode(rendered)?;
    let z0 = codec.encode_frame(input_image, 0)?;
    if (z0.height(), z0.width()) != (z.height(), z.width()) {
        return Err(Error::shape("input image and rendered frames differ in resolution"));
    }
    let pool = reference_pool(&z0, &z.slice_frames(0..settings.n_well))?;
    let lambda = latent_momentum_coefficients(&z, &pool, settings.lambda0)?;
    let mut zt = initial_latent(&z, schedule, noise)?;
    for t in (1..=schedule.steps()).rev() {
        zt = momentum_reverse_step(&zt, t, &z, &lambda, denoiser, &z0, schedule, noise, settings.forms)?;
    }
    let clip = codec.decode(&zt)?;
    Ok(PhiOutput {
        clip,
        latents: zt,
        lambda,
    })
}
