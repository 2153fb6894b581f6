use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::latent::LatentVideo;
use super::noise::{NoiseSource, NoiseTag};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Noise predictor `eps_theta(z_t, t, c)`.
///
/// Called once per reverse step with the whole latent video. Implementations
/// must be deterministic and return exactly `z_t.data().len()` values.
pub trait Denoiser: Send + Sync {
    fn predict(
        &self,
        z_t: &LatentVideo,
        t: usize,
        condition: &LatentVideo,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>>;
}

fn denoiser_error(t: usize, message: impl Into<String>) -> Error {
    Error::Denoiser {
        timestep: t,
        message: message.into(),
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, z_t: &LatentVideo, _: usize, _: &LatentVideo, _: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(vec![0.0; z_t.data().len()])
    }
}

/// Knows the clean latent for each global frame index and inverts the forward process exactly.
#[derive(Clone, Debug, Default)]
pub struct OracleDenoiser {
    frame_len: usize,
    targets: BTreeMap<usize, Vec<f64>>,
}

impl OracleDenoiser {
    pub fn new(targets: &LatentVideo) -> Self {
        let mut o = Self::default();
        o.insert(targets).expect("fresh oracle accepts any shape");
        o
    }

    /// Adds or replaces targets, keyed by the clip's frame indices.
    pub fn insert(&mut self, targets: &LatentVideo) -> Result<()> {
        if !self.targets.is_empty() && targets.frame_len() != self.frame_len {
            return Err(Error::shape(format!(
                "oracle holds frames of {} values, got {}",
                self.frame_len,
                targets.frame_len()
            )));
        }
        self.frame_len = targets.frame_len();
        for (i, &k) in targets.frame_indices().iter().enumerate() {
            self.targets.insert(k, targets.frame(i).to_vec());
        }
        Ok(())
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets.keys().copied()
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, z_t: &LatentVideo, t: usize, _: &LatentVideo, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if z_t.frame_len() != self.frame_len {
            return Err(denoiser_error(
                t,
                format!("oracle frames have {} values, input has {}", self.frame_len, z_t.frame_len()),
            ));
        }
        let ab = schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = Vec::with_capacity(z_t.data().len());
        for (i, &k) in z_t.frame_indices().iter().enumerate() {
            let target = self
                .targets
                .get(&k)
                .ok_or_else(|| denoiser_error(t, format!("oracle has no target for frame {k}")))?;
            out.extend(z_t.frame(i).iter().zip(target).map(|(z, x)| (z - a * x) / s));
        }
        Ok(out)
    }
}

/// Exact noise predictor when every latent element is drawn from `N(mean, std^2)`.
///
/// Under the forward process `z_t = sqrt(abar) x0 + sqrt(1 - abar) eps` with
/// `x0 ~ N(m, s^2)` independent of `eps ~ N(0, 1)`, the pair `(eps, z_t)` is
/// jointly Gaussian with
///
/// ```text
/// E[z_t] = sqrt(abar) m,   Var[z_t] = abar s^2 + 1 - abar,   Cov[eps, z_t] = sqrt(1 - abar).
/// ```
///
/// The minimizer of `E|eps - f(z_t)|^2` is the conditional mean
///
/// ```text
/// E[eps | z_t] = Cov[eps, z_t] / Var[z_t] * (z_t - E[z_t])
///              = sqrt(1 - abar) (z_t - sqrt(abar) m) / (abar s^2 + 1 - abar),
/// ```
///
/// which is also `-sqrt(1 - abar)` times the score of the marginal
/// `N(sqrt(abar) m, abar s^2 + 1 - abar)`. With `s = 0` it reduces to
/// [`OracleDenoiser`] for the constant target `m`.
#[derive(Clone, Debug)]
pub struct GaussianScoreDenoiser {
    mean: Vec<f64>,
    std: f64,
}

impl GaussianScoreDenoiser {
    /// `mean` is applied cyclically over each frame's values, so a length-`C`
    /// vector gives per-channel means and a full frame gives per-element means.
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self> {
        if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian denoiser mean must be non-empty and finite"));
        }
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::invalid(format!("gaussian denoiser std {std} must be >= 0")));
        }
        Ok(Self { mean, std })
    }
}

impl Denoiser for GaussianScoreDenoiser {
    fn predict(&self, z_t: &LatentVideo, t: usize, _: &LatentVideo, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if z_t.frame_len() % self.mean.len() != 0 {
            return Err(denoiser_error(
                t,
                format!("mean of length {} does not tile a frame of {}", self.mean.len(), z_t.frame_len()),
            ));
        }
        let ab = schedule.alpha_bar(t);
        let k = (1.0 - ab).sqrt() / (ab * self.std * self.std + 1.0 - ab);
        let a = ab.sqrt();
        let n = self.mean.len();
        Ok(z_t
            .data()
            .iter()
            .enumerate()
            .map(|(i, z)| k * (z - a * self.mean[i % n]))
            .collect())
    }
}

/// Per-timestep, per-element affine predictor `eps = w * (z - mu) / sd + b`.
///
/// `mu` and `sd` are fixed input statistics taken from the training pairs, which
/// makes every `(w, b)` subproblem perfectly conditioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineDenoiser {
    steps: usize,
    frame_len: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
}

impl AffineDenoiser {
    /// The untrained model: predicts zero everywhere.
    pub fn zeros(steps: usize, frame_len: usize) -> Self {
        let n = steps * frame_len;
        Self {
            steps,
            frame_len,
            weight: vec![0.0; n],
            bias: vec![0.0; n],
            input_mean: vec![0.0; n],
            input_scale: vec![1.0; n],
        }
    }

    fn eval(&self, t: usize, k: usize, z: f64) -> f64 {
        let p = (t - 1) * self.frame_len + k;
        self.weight[p] * (z - self.input_mean[p]) / self.input_scale[p] + self.bias[p]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("{} line {} column {}", path.display(), e.line(), e.column()), e.to_string()))?;
        let n = model.steps * model.frame_len;
        if [&model.weight, &model.bias, &model.input_mean, &model.input_scale]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(Error::parse(path.display().to_string(), "parameter arrays do not match steps x frame_len"));
        }
        Ok(model)
    }
}

impl Denoiser for AffineDenoiser {
    fn predict(&self, z_t: &LatentVideo, t: usize, _: &LatentVideo, _: &NoiseSchedule) -> Result<Vec<f64>> {
        if t == 0 || t > self.steps {
            return Err(denoiser_error(t, format!("model trained for 1..={} only", self.steps)));
        }
        if z_t.frame_len() != self.frame_len {
            return Err(denoiser_error(
                t,
                format!("model expects frames of {} values, got {}", self.frame_len, z_t.frame_len()),
            ));
        }
        let n = self.frame_len;
        Ok(z_t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &z)| self.eval(t, i % n, z))
            .collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Noise draws per dataset frame and timestep.
    pub pairs_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            pairs_per_step: 32,
            learning_rate: 0.25,
            seed: 0,
        }
    }
}

/// Fits an [`AffineDenoiser`] to the noise-prediction objective by full-batch
/// gradient descent on a fixed set of `(z_t, eps)` pairs.
///
/// Returns the model and the mean squared error before each epoch's update.
pub fn train_toy_denoiser(
    dataset: &LatentVideo,
    schedule: &NoiseSchedule,
    opts: &TrainOptions,
) -> Result<(AffineDenoiser, Vec<f64>)> {
    if dataset.frames() == 0 {
        return Err(Error::invalid("training dataset is empty"));
    }
    let (steps, n, frames, pairs) = (schedule.steps(), dataset.frame_len(), dataset.frames(), opts.pairs_per_step.max(1));
    let mut model = AffineDenoiser::zeros(steps, n);
    if opts.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let noise = NoiseSource::new(opts.seed);
    let samples = frames * pairs;

    // Per timestep: inputs and targets laid out [sample][element].
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    for t in 1..=steps {
        let ab = schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut z = Vec::with_capacity(samples * n);
        let mut e = Vec::with_capacity(samples * n);
        for f in 0..frames {
            for p in 0..pairs {
                let eps = noise.normal(f * pairs + p, t, NoiseTag::Forward, n);
                z.extend(dataset.frame(f).iter().zip(&eps).map(|(x, e)| a * x + s * e));
                e.extend(eps);
            }
        }
        for k in 0..n {
            let col = (0..samples).map(|i| z[i * n + k]);
            let mean = col.clone().sum::<f64>() / samples as f64;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / samples as f64;
            let idx = (t - 1) * n + k;
            model.input_mean[idx] = mean;
            model.input_scale[idx] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        inputs.push(z);
        targets.push(e);
    }

    let total = (steps * samples * n) as f64;
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut loss = 0.0;
        for t in 1..=steps {
            let (z, e) = (&inputs[t - 1], &targets[t - 1]);
            let mut gw = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..samples {
                for k in 0..n {
                    let idx = (t - 1) * n + k;
                    let u = (z[i * n + k] - model.input_mean[idx]) / model.input_scale[idx];
                    let r = model.weight[idx] * u + model.bias[idx] - e[i * n + k];
                    loss += r * r;
                    gw[k] += 2.0 * r * u;
                    gb[k] += 2.0 * r;
                }
            }
            for k in 0..n {
                let idx = (t - 1) * n + k;
                model.weight[idx] -= opts.learning_rate * gw[k] / samples as f64;
                model.bias[idx] -= opts.learning_rate * gb[k] / samples as f64;
            }
        }
        let loss = loss / total;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        history.push(loss);
    }
    log::debug!("toy denoiser: loss {:.3e} -> {:.3e}", history[0], history[history.len() - 1]);
    Ok((model, history))
}

/// Mean squared noise-prediction error of `denoiser` on fresh forward-process pairs.
pub fn denoising_loss(
    denoiser: &dyn Denoiser,
    dataset: &LatentVideo,
    schedule: &NoiseSchedule,
    pairs_per_step: usize,
    seed: u64,
) -> Result<f64> {
    let noise = NoiseSource::new(seed);
    let condition = dataset.slice_frames(0..1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..=schedule.steps() {
        let ab = schedule.alpha_bar(t);
        for p in 0..pairs_per_step {
            let eps: Vec<f64> = dataset
                .frame_indices()
                .iter()
                .enumerate()
                .flat_map(|(i, _)| noise.normal(i * pairs_per_step + p, t, NoiseTag::Forward, dataset.frame_len()))
                .collect();
            let z = dataset.with_data(
                dataset
                    .data()
                    .iter()
                    .zip(&eps)
                    .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
                    .collect(),
            )?;
            let pred = denoiser.predict(&z, t, &condition, schedule)?;
            sum += pred.iter().zip(&eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += eps.len();
        }
    }
    Ok(sum / count as f64)
}
