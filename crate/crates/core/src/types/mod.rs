//! Shared domain types: Gaussians, cameras, frames and configuration.

mod camera;
mod config;
mod gaussian;
mod image;

pub use camera::{Camera, Trajectory};
pub use config::{MomentumNoise, PipelineConfig, ReverseStep, CONFIG_KEYS};
pub use gaussian::{
    covariance_matrix, dc_to_rgb, normalize_quaternion, quaternion_mul, rgb_to_dc, rotation_matrix,
    sh_coeff_count, validate_scene, GaussianPrimitive, GaussianScene, Violation, SCALE_EPS, SH_C0,
};
pub use image::{ImageFrame, VideoClip};
