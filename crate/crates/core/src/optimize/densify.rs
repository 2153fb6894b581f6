use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::{rotation_matrix, GaussianPrimitive, GaussianScene, SCALE_EPS};

/// Running mean of each primitive's screen-space positional gradient norm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradAccumulator {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            count: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    pub fn add(&mut self, index: usize, norm: f64) {
        self.sum[index] += norm;
        self.count[index] += 1;
    }

    /// Mean over the views that saw the primitive; zero if none did.
    pub fn mean(&self, index: usize) -> f64 {
        match self.count.get(index) {
            Some(&c) if c > 0 => self.sum[index] / c as f64,
            _ => 0.0,
        }
    }
}

/// Density-control thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyRules {
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Primitives whose largest scale is at most this are cloned, larger ones split.
    pub size_threshold: f64,
    pub reset_value: f64,
    pub split_factor: f64,
}

/// Where a primitive of the new scene came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Cloned(usize),
    Split(usize),
}

#[derive(Clone, Debug)]
pub struct DensifyOutcome {
    pub scene: GaussianScene,
    pub origins: Vec<Origin>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones or splits high-gradient primitives, then prunes transparent ones.
///
/// Split children are placed at two samples from the parent's Gaussian with
/// every scale divided by `split_factor`. Pruning never touches the
/// parameters of survivors.
pub fn densify_and_prune(scene: &GaussianScene, acc: &GradAccumulator, rules: &DensifyRules, seed: u64) -> DensifyOutcome {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut grown: Vec<(GaussianPrimitive, Origin)> = Vec::with_capacity(scene.len());
    let (mut cloned, mut split) = (0, 0);
    for (i, p) in scene.primitives.iter().enumerate() {
        if acc.mean(i) < rules.grad_threshold || acc.mean(i) == 0.0 {
            grown.push((p.clone(), Origin::Kept(i)));
            continue;
        }
        if p.scale.max() <= rules.size_threshold {
            grown.push((p.clone(), Origin::Kept(i)));
            grown.push((p.clone(), Origin::Cloned(i)));
            cloned += 1;
        } else {
            let r = rotation_matrix(&p.rotation);
            let scale = p.scale.map(|s| (s / rules.split_factor).max(SCALE_EPS));
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let offset: Vector3<f64> = r * p.scale.component_mul(&z);
                let mut child = p.clone();
                child.position += offset;
                child.scale = scale;
                grown.push((child, Origin::Split(i)));
            }
            split += 1;
        }
    }
    let before = grown.len();
    grown.retain(|(p, _)| p.opacity >= rules.prune_opacity);
    let pruned = before - grown.len();
    let (prims, origins): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let mut out = GaussianScene::from_primitives(scene.sh_degree, prims);
    out.metadata = scene.metadata.clone();
    DensifyOutcome {
        scene: out,
        origins,
        cloned,
        split,
        pruned,
    }
}

/// Caps every opacity at `value`.
pub fn reset_opacity(scene: &mut GaussianScene, value: f64) {
    for p in &mut scene.primitives {
        p.opacity = p.opacity.min(value);
    }
}
