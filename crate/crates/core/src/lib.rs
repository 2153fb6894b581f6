//! Cascaded-momentum video diffusion sampling and iterative 3D Gaussian
//! splatting reconstruction from a single RGBD view.

pub mod bridge;
pub mod cascade;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod optimize;
pub mod pipeline;
pub mod render;
pub mod types;

pub use error::{Error, Result};
