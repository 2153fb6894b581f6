use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use crate::bridge::ExternalDenoiser;
use crate::diffusion::{AffineDenoiser, Denoiser, GaussianScoreDenoiser, IdentityCodec, LatentCodec, OracleDenoiser, PatchCodec, ZeroDenoiser};
use crate::error::{Error, Result};
use crate::render::render_video_indexed;
use crate::types::{GaussianScene, ImageFrame, Trajectory};

/// Denoiser choice as written in the configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenoiserSpec {
    /// Knows the renders of a reference scene along the trajectory.
    Oracle,
    /// Analytic score of a Gaussian centred on the input latent.
    Gaussian,
    Zero,
    Trained(PathBuf),
    External(String),
}

impl FromStr for DenoiserSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("trained:") {
            return Ok(Self::Trained(PathBuf::from(path)));
        }
        if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("external denoiser needs a command".into()));
            }
            return Ok(Self::External(cmd.to_string()));
        }
        match s {
            "oracle" => Ok(Self::Oracle),
            "gaussian" => Ok(Self::Gaussian),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!(
                "unknown denoiser {other:?}; expected oracle, gaussian, zero, trained:<path> or external:<command>"
            ))),
        }
    }
}

pub fn codec_for(latent_factor: usize) -> Result<Box<dyn LatentCodec>> {
    Ok(match latent_factor {
        1 => Box::new(IdentityCodec),
        f => Box::new(PatchCodec::new(f)?),
    })
}

/// Oracle targeting the latents of `scene` rendered along `trajectory` (frames 1..=M).
pub fn oracle_for_scene(
    scene: &GaussianScene,
    trajectory: &Trajectory,
    background: [f64; 3],
    codec: &dyn LatentCodec,
) -> Result<OracleDenoiser> {
    let clip = render_video_indexed(scene, trajectory, background, 1)?;
    Ok(OracleDenoiser::new(&codec.encode(&clip)?))
}

/// Everything a denoiser may need to be built.
pub struct DenoiserContext<'a> {
    pub input_image: &'a ImageFrame,
    pub trajectory: &'a Trajectory,
    pub codec: &'a dyn LatentCodec,
    /// Scene the oracle renders.
    pub oracle_scene: &'a GaussianScene,
    pub background: [f64; 3],
    pub gaussian_std: f64,
    pub bridge_timeout: Duration,
}

pub fn build_denoiser(spec: &DenoiserSpec, ctx: &DenoiserContext<'_>) -> Result<Box<dyn Denoiser>> {
    Ok(match spec {
        DenoiserSpec::Oracle => Box::new(oracle_for_scene(ctx.oracle_scene, ctx.trajectory, ctx.background, ctx.codec)?),
        DenoiserSpec::Gaussian => {
            let z0 = ctx.codec.encode_frame(ctx.input_image, 0)?;
            Box::new(GaussianScoreDenoiser::new(z0.data().to_vec(), ctx.gaussian_std)?)
        }
        DenoiserSpec::Zero => Box::new(ZeroDenoiser),
        DenoiserSpec::Trained(path) => Box::new(AffineDenoiser::load(path)?),
        DenoiserSpec::External(cmd) => Box::new(ExternalDenoiser::spawn(cmd, ctx.bridge_timeout)?),
    })
}
