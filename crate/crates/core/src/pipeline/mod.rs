//! The full reconstruction loop: RGBD initialization, camera paths, windowed
//! enhancement and refinement with overlap bookkeeping, and evaluation.

mod denoisers;
mod eval;
mod init;
mod run;
mod store;
mod trajectory;

pub use denoisers::{build_denoiser, codec_for, oracle_for_scene, DenoiserContext, DenoiserSpec};
pub use eval::{evaluate, EvalRow, EvalTable};
pub use init::{init_scene_from_rgbd, RGBDInput};
pub use run::{read_loss_csv, run_pipeline, run_pipeline_with, PipelineOutput, RunOptions};
pub use store::{FrameStore, Provenance, StoredFrame};
pub use trajectory::{make_trajectory, window_count, window_indices, TrajectoryKind, TrajectoryParams};
