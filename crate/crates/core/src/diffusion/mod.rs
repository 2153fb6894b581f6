//! Diffusion sampling over latent videos: schedules, codecs, denoisers and
//! the momentum-guided reverse process.

mod denoiser;
mod latent;
mod noise;
mod sampler;
mod schedule;

pub use denoiser::{
    denoising_loss, train_toy_denoiser, AffineDenoiser, Denoiser, GaussianScoreDenoiser, OracleDenoiser,
    TrainOptions, ZeroDenoiser,
};
pub use latent::{IdentityCodec, LatentCodec, LatentVideo, PatchCodec};
pub use noise::{derive_seed, NoiseSource, NoiseTag};
pub use sampler::{
    ancestral_sample, initial_latent, latent_momentum_coefficients, momentum_reverse_step, q_sample,
    reference_pool, sample_phi, vanilla_reverse_step, LatentMomentumField, PhiOutput, PhiSettings,
    ReferencePool, StepForms,
};
pub use schedule::{build_schedule, NoiseSchedule};
