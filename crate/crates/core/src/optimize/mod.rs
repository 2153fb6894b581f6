//! Scene refinement: image metrics, the reconstruction loss and its gradient,
//! Adam updates through the renderer, and density control.

mod densify;
mod fit;
mod metrics;

pub use densify::{densify_and_prune, reset_opacity, DensifyOutcome, DensifyRules, GradAccumulator, Origin};
pub use fit::{densify_prune_reset, optimize_scene, optimize_scene_with, write_loss_csv, LossRecord, OptimizeConfig};
pub use metrics::{gs_loss, psnr, ssim, LossTerms};
