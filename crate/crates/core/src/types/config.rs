use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient on the anchor noise term of the momentum step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumNoise {
    /// `(1 - sqrt(abar_{t-1})) * eps`
    #[default]
    AsPrinted,
    /// `sqrt(1 - abar_{t-1}) * eps`, the forward-process marginal.
    ForwardConsistent,
}

/// Prefactor of the vanilla reverse step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReverseStep {
    /// Standard DDPM posterior mean, prefactor `1 / sqrt(alpha_t)`.
    #[default]
    Ddpm,
    /// Prefactor `1 / sqrt(abar_t)`. Unstable for long schedules; kept for comparison.
    CumulativePrefactor,
}

/// Every tunable of the reconstruction loop, as a flat key/value document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames per window (N).
    pub window_len: usize,
    /// Frames shared between consecutive windows (n).
    pub overlap: usize,
    /// Latent momentum weight.
    pub lambda0: f64,
    /// Scale-map threshold for pixel momentum.
    pub tau: f64,
    /// SSIM share of the reconstruction loss.
    pub gamma: f64,
    /// Diffusion step count (T).
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Zero reverse-process noise.
    pub deterministic: bool,
    pub momentum_noise: MomentumNoise,
    pub reverse_step: ReverseStep,
    /// Optimizer steps per pipeline iteration.
    pub opt_steps: usize,
    pub densify_interval: usize,
    pub opacity_reset_interval: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub opacity_reset_value: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub densify_size_fraction: f64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    /// Scale-map normalization bound; the 90th-percentile initial scale when unset.
    pub s_max: Option<f64>,
    pub background: [f64; 3],
    pub seed: u64,
    pub sh_degree: usize,
    /// Pixel stride of the RGBD initializer.
    pub init_stride: usize,
    pub init_opacity: f64,
    /// `oracle`, `gaussian`, `zero`, `trained:<path>` or `external:<command>`.
    pub denoiser: String,
    /// Scene whose renders the oracle denoiser targets; the initial scene when unset.
    pub oracle_scene: Option<String>,
    /// Spread of the Gaussian-score denoiser around the input latent.
    pub gaussian_std: f64,
    /// Seconds an external denoiser may take per call.
    pub bridge_timeout: f64,
    /// Latent downsampling factor; 1 is the identity codec.
    pub latent_factor: usize,
    pub input_image: Option<String>,
    /// Depth tensor (H x W) aligned with the input image.
    pub input_depth: Option<String>,
    /// Camera JSON; its first camera is the input view.
    pub input_camera: Option<String>,
    /// Focal length of the default input camera, in pixels. Used when `input_camera` is unset.
    pub input_focal: Option<f64>,
    /// `orbit`, `dolly`, `zoom-out`, `lateral` or `file`.
    pub trajectory: String,
    pub trajectory_count: usize,
    /// Per-frame translation of dolly, zoom-out and lateral paths.
    pub trajectory_step: f64,
    pub trajectory_radius: f64,
    /// Total orbit sweep in degrees.
    pub trajectory_angle: f64,
    pub trajectory_file: Option<String>,
    pub output_dir: String,
    pub checkpoint_dir: Option<String>,
}

/// Every key of the configuration document, in declaration order.
pub const CONFIG_KEYS: &[&str] = &[
    "window_len",
    "overlap",
    "lambda0",
    "tau",
    "gamma",
    "diffusion_steps",
    "beta_min",
    "beta_max",
    "deterministic",
    "momentum_noise",
    "reverse_step",
    "opt_steps",
    "densify_interval",
    "opacity_reset_interval",
    "densify_grad_threshold",
    "prune_opacity_threshold",
    "opacity_reset_value",
    "densify_size_fraction",
    "lr_position",
    "lr_scale",
    "lr_rotation",
    "lr_opacity",
    "lr_color",
    "s_max",
    "background",
    "seed",
    "sh_degree",
    "init_stride",
    "init_opacity",
    "denoiser",
    "oracle_scene",
    "gaussian_std",
    "bridge_timeout",
    "latent_factor",
    "input_image",
    "input_depth",
    "input_camera",
    "input_focal",
    "trajectory",
    "trajectory_count",
    "trajectory_step",
    "trajectory_radius",
    "trajectory_angle",
    "trajectory_file",
    "output_dir",
    "checkpoint_dir",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_len: 25,
            overlap: 10,
            lambda0: 0.8,
            tau: 0.5,
            gamma: 0.2,
            diffusion_steps: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
            deterministic: false,
            momentum_noise: MomentumNoise::AsPrinted,
            reverse_step: ReverseStep::Ddpm,
            opt_steps: 5000,
            densify_interval: 100,
            opacity_reset_interval: 3000,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 5e-3,
            opacity_reset_value: 1e-2,
            densify_size_fraction: 0.01,
            lr_position: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            s_max: None,
            background: [0.0; 3],
            seed: 0,
            sh_degree: 0,
            init_stride: 1,
            init_opacity: 0.8,
            denoiser: "oracle".into(),
            oracle_scene: None,
            gaussian_std: 0.25,
            bridge_timeout: 60.0,
            latent_factor: 1,
            input_image: None,
            input_depth: None,
            input_camera: None,
            input_focal: None,
            trajectory: "lateral".into(),
            trajectory_count: 25,
            trajectory_step: 0.02,
            trajectory_radius: 0.0,
            trajectory_angle: 10.0,
            trajectory_file: None,
            output_dir: "out".into(),
            checkpoint_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(1 <= self.overlap && self.overlap < self.window_len) {
            return fail(format!(
                "need 1 <= overlap < window_len, got overlap={} window_len={}",
                self.overlap, self.window_len
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda0) {
            return fail(format!("lambda0 {} outside [0, 1]", self.lambda0));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return fail(format!("tau {} outside [0, 1)", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.diffusion_steps == 0 {
            return fail("diffusion_steps must be >= 1".into());
        }
        if !(0.0 < self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return fail(format!(
                "need 0 < beta_min <= beta_max < 1, got {} and {}",
                self.beta_min, self.beta_max
            ));
        }
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 {
            return fail("densify and opacity-reset intervals must be >= 1".into());
        }
        if let Some(s) = self.s_max {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("s_max {s} must be positive"));
            }
        }
        if self.sh_degree > 2 {
            return fail(format!("sh_degree {} above 2 is not supported", self.sh_degree));
        }
        if self.init_stride == 0 {
            return fail("init_stride must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.init_opacity) {
            return fail(format!("init_opacity {} outside [0, 1)", self.init_opacity));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return fail("background components must be in [0, 1]".into());
        }
        if !(self.gaussian_std > 0.0 && self.gaussian_std.is_finite()) {
            return fail(format!("gaussian_std {} must be positive", self.gaussian_std));
        }
        if !(self.bridge_timeout > 0.0 && self.bridge_timeout.is_finite()) {
            return fail(format!("bridge_timeout {} must be positive", self.bridge_timeout));
        }
        if self.latent_factor == 0 {
            return fail("latent_factor must be >= 1".into());
        }
        if let Some(f) = self.input_focal {
            if !(f > 0.0 && f.is_finite()) {
                return fail(format!("input_focal {f} must be positive"));
            }
        }
        if self.trajectory_count == 0 {
            return fail("trajectory_count must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "config".to_string());
            Error::parse(location, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces keys, then validates the result once.
    ///
    /// Each raw value is read as a TOML value, falling back to a bare string.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()).expect("config round-trips");
        for (key, raw) in pairs {
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            table.insert(key.to_string(), value);
        }
        Self::from_toml_str(&toml::to_string(&table).expect("table serializes"))
            .map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        self.with_overrides([(key, raw)])
    }
}
