use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::densify::{densify_and_prune, reset_opacity, DensifyOutcome, DensifyRules, GradAccumulator, Origin};
use super::metrics::gs_loss;
use crate::diffusion::derive_seed;
use crate::error::{Error, Result};
use crate::render::{render_color, render_gradients, SceneGradients};
use crate::types::{normalize_quaternion, validate_scene, Camera, GaussianScene, PipelineConfig, VideoClip, SCALE_EPS};

/// Largest opacity the optimizer will produce.
const OPACITY_CAP: f64 = 1.0 - 1e-6;
const OPACITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeConfig {
    pub steps: usize,
    /// Multiplied by the scene extent at the start of each call.
    pub lr_position: f64,
    /// Position rate at the last step relative to the first; decays exponentially in between.
    pub lr_position_final_factor: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub densify_size_fraction: f64,
    pub gamma: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self::from_pipeline(&PipelineConfig::default())
    }
}

impl OptimizeConfig {
    pub fn from_pipeline(cfg: &PipelineConfig) -> Self {
        Self {
            steps: cfg.opt_steps,
            lr_position: cfg.lr_position,
            lr_position_final_factor: 0.01,
            lr_scale: cfg.lr_scale,
            lr_rotation: cfg.lr_rotation,
            lr_opacity: cfg.lr_opacity,
            lr_color: cfg.lr_color,
            densify_interval: cfg.densify_interval,
            densify_grad_threshold: cfg.densify_grad_threshold,
            prune_opacity_threshold: cfg.prune_opacity_threshold,
            opacity_reset_interval: cfg.opacity_reset_interval,
            opacity_reset_value: cfg.opacity_reset_value,
            densify_size_fraction: cfg.densify_size_fraction,
            gamma: cfg.gamma,
            background: cfg.background,
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 {
            return Err(Error::Config("densify and opacity-reset intervals must be >= 1".into()));
        }
        let rates = [
            self.lr_position,
            self.lr_position_final_factor,
            self.lr_scale,
            self.lr_rotation,
            self.lr_opacity,
            self.lr_color,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        let thresholds = [
            self.densify_grad_threshold,
            self.prune_opacity_threshold,
            self.opacity_reset_value,
            self.densify_size_fraction,
        ];
        if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("thresholds must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    fn rules(&self, extent: f64) -> DensifyRules {
        DensifyRules {
            grad_threshold: self.densify_grad_threshold,
            prune_opacity: self.prune_opacity_threshold,
            size_threshold: self.densify_size_fraction * extent,
            reset_value: self.opacity_reset_value,
            split_factor: 1.6,
        }
    }
}

/// One optimizer step's bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub frame_index: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
    pub num_gaussians: usize,
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut text = String::from("step,frame_index,loss,l1,ssim_term,num_gaussians\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.frame_index, r.loss, r.l1, r.ssim_term, r.num_gaussians
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Applies the density schedule for `step` (1-based).
///
/// Densify and prune run when `step` is a multiple of the densify interval, the
/// opacity cap when it is a multiple of the reset interval.
pub fn densify_prune_reset(
    scene: &GaussianScene,
    acc: &GradAccumulator,
    step: usize,
    config: &OptimizeConfig,
    extent: f64,
) -> DensifyOutcome {
    let mut out = if step % config.densify_interval == 0 {
        densify_and_prune(scene, acc, &config.rules(extent), derive_seed(config.seed, &[0xd5, step as u64]))
    } else {
        DensifyOutcome {
            scene: scene.clone(),
            origins: (0..scene.len()).map(Origin::Kept).collect(),
            cloned: 0,
            split: 0,
            pruned: 0,
        }
    };
    if step % config.opacity_reset_interval == 0 {
        reset_opacity(&mut out.scene, config.opacity_reset_value);
    }
    out
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Slot layout of one primitive's parameter vector.
const POS: usize = 0;
const LOG_SCALE: usize = 3;
const ROT: usize = 6;
const LOGIT_OPACITY: usize = 10;
const SH: usize = 11;

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

fn param_len(sh_len: usize) -> usize {
    SH + 3 * sh_len
}

fn logit(o: f64) -> f64 {
    let o = o.clamp(OPACITY_FLOOR, OPACITY_CAP);
    (o / (1.0 - o)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Adam {
    moments: Vec<Moments>,
    t: i32,
}

impl Adam {
    fn new(scene: &GaussianScene) -> Self {
        Self {
            moments: scene.primitives.iter().map(|p| Moments::zeros(param_len(p.sh.len()))).collect(),
            t: 0,
        }
    }

    fn remap(&mut self, origins: &[Origin], scene: &GaussianScene) {
        self.moments = origins
            .iter()
            .zip(&scene.primitives)
            .map(|(o, p)| match o {
                Origin::Kept(i) => std::mem::take(&mut self.moments[*i]),
                Origin::Cloned(_) | Origin::Split(_) => Moments::zeros(param_len(p.sh.len())),
            })
            .collect();
    }

    fn reset_opacity_moments(&mut self) {
        for m in &mut self.moments {
            m.m[LOGIT_OPACITY] = 0.0;
            m.v[LOGIT_OPACITY] = 0.0;
        }
    }

    fn step(&mut self, scene: &mut GaussianScene, grads: &SceneGradients, rates: &[f64; 5]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (i, p) in scene.primitives.iter_mut().enumerate() {
            let g = &grads.primitives[i];
            let mut flat = vec![0.0; param_len(p.sh.len())];
            for k in 0..3 {
                flat[POS + k] = g.position[k];
                flat[LOG_SCALE + k] = g.scale[k] * p.scale[k];
            }
            flat[ROT..ROT + 4].copy_from_slice(&g.rotation);
            flat[LOGIT_OPACITY] = g.opacity * p.opacity * (1.0 - p.opacity);
            for (k, c) in g.sh.iter().enumerate() {
                flat[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
            }
            if flat.iter().all(|v| *v == 0.0) && self.moments[i].m.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mom = &mut self.moments[i];
            let mut delta = vec![0.0; flat.len()];
            for k in 0..flat.len() {
                mom.m[k] = BETA1 * mom.m[k] + (1.0 - BETA1) * flat[k];
                mom.v[k] = BETA2 * mom.v[k] + (1.0 - BETA2) * flat[k] * flat[k];
                let rate = match k {
                    POS..LOG_SCALE => rates[0],
                    LOG_SCALE..ROT => rates[1],
                    ROT..LOGIT_OPACITY => rates[2],
                    LOGIT_OPACITY => rates[3],
                    _ => rates[4],
                };
                delta[k] = rate * (mom.m[k] / bc1) / ((mom.v[k] / bc2).sqrt() + ADAM_EPS);
            }
            p.position -= Vector3::new(delta[POS], delta[POS + 1], delta[POS + 2]);
            for k in 0..3 {
                p.scale[k] = (p.scale[k].ln() - delta[LOG_SCALE + k]).exp().max(SCALE_EPS);
            }
            let q: [f64; 4] = std::array::from_fn(|k| p.rotation[k] - delta[ROT + k]);
            if let Ok(q) = normalize_quaternion(q) {
                p.rotation = q;
            }
            if delta[LOGIT_OPACITY] != 0.0 {
                p.opacity = sigmoid(logit(p.opacity) - delta[LOGIT_OPACITY]).clamp(0.0, OPACITY_CAP);
            }
            for (k, c) in p.sh.iter_mut().enumerate() {
                for ch in 0..3 {
                    c[ch] -= delta[SH + 3 * k + ch];
                }
            }
        }
    }
}

/// Fits the scene to `supervision`, cycling through frames in order.
///
/// `cameras[i]` must be the viewpoint of `supervision.frames()[i]`.
pub fn optimize_scene(
    scene: &GaussianScene,
    supervision: &VideoClip,
    cameras: &[Camera],
    config: &OptimizeConfig,
) -> Result<(GaussianScene, Vec<LossRecord>)> {
    optimize_scene_with(scene, supervision, cameras, config, |_, _| {})
}

/// [`optimize_scene`] with a callback after every completed step.
pub fn optimize_scene_with(
    scene: &GaussianScene,
    supervision: &VideoClip,
    cameras: &[Camera],
    config: &OptimizeConfig,
    mut on_step: impl FnMut(usize, &GaussianScene),
) -> Result<(GaussianScene, Vec<LossRecord>)> {
    config.validate()?;
    if supervision.len() != cameras.len() || cameras.is_empty() {
        return Err(Error::invalid(format!(
            "{} supervision frames for {} cameras",
            supervision.len(),
            cameras.len()
        )));
    }
    for (f, c) in supervision.frames().iter().zip(cameras) {
        if (f.width(), f.height()) != (c.width, c.height) {
            return Err(Error::shape("supervision frame does not match its camera resolution"));
        }
    }
    if let Some(v) = validate_scene(scene).first() {
        return Err(Error::invalid(format!("input scene: {v}")));
    }

    let mut scene = scene.clone();
    let extent = scene.extent();
    let mut adam = Adam::new(&scene);
    let mut acc = GradAccumulator::new(scene.len());
    let mut history = Vec::with_capacity(config.steps);
    let decay_span = config.steps.saturating_sub(1).max(1) as f64;

    for step in 1..=config.steps {
        let k = (step - 1) % cameras.len();
        let cam = &cameras[k];
        let target = &supervision.frames()[k];
        let frame_index = supervision.frame_indices()[k];
        let rendered = render_color(&scene, cam, config.background)?;
        let terms = gs_loss(&rendered, target, config.gamma)?;
        if !terms.loss.is_finite() {
            log::error!("non-finite loss; scene snapshot has {} primitives", scene.len());
            return Err(Error::NonFinite(format!(
                "loss {} at step {step} on frame {frame_index} with {} gaussians",
                terms.loss,
                scene.len()
            )));
        }
        let grads = render_gradients(&scene, cam, config.background, &terms.grad)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradients at step {step} on frame {frame_index}")));
        }
        for (i, g) in grads.mean2d.iter().enumerate() {
            if grads.visible[i] {
                // Normalized-device units, matching the usual densification threshold scale.
                let ndc = Vector3::new(g.x * 0.5 * cam.width as f64, g.y * 0.5 * cam.height as f64, 0.0);
                acc.add(i, ndc.norm());
            }
        }
        let progress = (step - 1) as f64 / decay_span;
        let rates = [
            config.lr_position * extent * config.lr_position_final_factor.powf(progress),
            config.lr_scale,
            config.lr_rotation,
            config.lr_opacity,
            config.lr_color,
        ];
        adam.step(&mut scene, &grads, &rates);
        history.push(LossRecord {
            step,
            frame_index,
            loss: terms.loss,
            l1: terms.l1,
            ssim_term: terms.ssim_term,
            num_gaussians: scene.len(),
        });

        let densify_now = step % config.densify_interval == 0 && step < config.steps;
        let reset_now = step % config.opacity_reset_interval == 0;
        if densify_now || reset_now {
            let outcome = if densify_now {
                densify_prune_reset(&scene, &acc, step, config, extent)
            } else {
                let mut s = scene.clone();
                reset_opacity(&mut s, config.opacity_reset_value);
                DensifyOutcome {
                    origins: (0..s.len()).map(Origin::Kept).collect(),
                    scene: s,
                    cloned: 0,
                    split: 0,
                    pruned: 0,
                }
            };
            if outcome.cloned + outcome.split + outcome.pruned > 0 {
                log::debug!(
                    "step {step}: cloned {}, split {}, pruned {} -> {} gaussians",
                    outcome.cloned,
                    outcome.split,
                    outcome.pruned,
                    outcome.scene.len()
                );
            }
            adam.remap(&outcome.origins, &outcome.scene);
            if reset_now {
                adam.reset_opacity_moments();
            }
            scene = outcome.scene;
            if densify_now {
                acc = GradAccumulator::new(scene.len());
            }
        }
        on_step(step, &scene);
    }
    Ok((scene, history))
}
