//! On-disk formats: scene PLY, camera JSON, float tensors and PNG frames.

pub mod cameras;
pub mod ply;
pub mod png;
pub mod tensor;

pub use cameras::{cameras_from_json, cameras_to_json, read_cameras, read_trajectory, write_cameras};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyPrecision};
pub use png::{read_png, write_gray_png, write_png};
pub use tensor::{decode_tensor, encode_tensor, read_tensor, write_tensor, DType, Tensor};
