use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::{Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::io::read_cameras;
use crate::types::{Camera, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Yaw around a pivot `radius` ahead of the base camera.
    Orbit,
    /// Forward along the optical axis.
    Dolly,
    /// Backward along the optical axis.
    ZoomOut,
    /// Sideways along the image x axis.
    Lateral,
    File,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "orbit" => Self::Orbit,
            "dolly" => Self::Dolly,
            "zoom-out" => Self::ZoomOut,
            "lateral" => Self::Lateral,
            "file" => Self::File,
            other => return Err(Error::Config(format!("unknown trajectory kind {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryParams {
    /// Translation per frame, in world units.
    pub step: f64,
    pub radius: f64,
    /// Total orbit sweep in degrees, reached at the last frame.
    pub angle_deg: f64,
    pub file: Option<PathBuf>,
}

/// `count` cameras following `base`; camera `k` (1-based) is `k` increments away from it.
pub fn make_trajectory(kind: TrajectoryKind, base: &Camera, params: &TrajectoryParams, count: usize) -> Result<Trajectory> {
    if count == 0 {
        return Err(Error::invalid("trajectory needs at least one camera"));
    }
    let right = base.rotation.row(0).transpose();
    let down = base.rotation.row(1).transpose();
    let forward = base.rotation.row(2).transpose();
    let moved = |offset: Vector3<f64>| -> Camera {
        let mut c = base.clone();
        c.translation = base.translation - base.rotation * offset;
        c
    };
    let cams = match kind {
        TrajectoryKind::File => {
            let path = params
                .file
                .as_ref()
                .ok_or_else(|| Error::Config("file trajectory needs a path".into()))?;
            let cams = read_cameras(path)?;
            if cams.len() < count {
                return Err(Error::Config(format!(
                    "{} holds {} cameras, {count} requested",
                    path.display(),
                    cams.len()
                )));
            }
            cams.into_iter().take(count).collect()
        }
        TrajectoryKind::Dolly => (1..=count).map(|k| moved(forward * params.step * k as f64)).collect(),
        TrajectoryKind::ZoomOut => (1..=count).map(|k| moved(-forward * params.step * k as f64)).collect(),
        TrajectoryKind::Lateral => (1..=count).map(|k| moved(right * params.step * k as f64)).collect(),
        TrajectoryKind::Orbit => {
            let center = base.center();
            let pivot = center + forward * params.radius;
            let axis = Unit::new_normalize(-down);
            (1..=count)
                .map(|k| {
                    let theta = params.angle_deg.to_radians() * k as f64 / count as f64;
                    let q = Rotation3::from_axis_angle(&axis, theta);
                    let eye = pivot + q * (center - pivot);
                    let mut c = base.clone();
                    c.rotation = base.rotation * q.matrix().transpose();
                    c.translation = -(c.rotation * eye);
                    c
                })
                .collect()
        }
    };
    Trajectory::new(cams)
}

/// Global frame indices covered by window `s`: `[s(N-n)+1, s(N-n)+N]`.
///
/// Panics unless `1 <= overlap < window_len`.
pub fn window_indices(s: usize, window_len: usize, overlap: usize) -> RangeInclusive<usize> {
    assert!(
        1 <= overlap && overlap < window_len,
        "need 1 <= overlap < window_len, got {overlap} and {window_len}"
    );
    let first = s * (window_len - overlap) + 1;
    first..=first + window_len - 1
}

/// Number of windows (`h + 1`) for a trajectory of `m` cameras.
pub fn window_count(m: usize, window_len: usize, overlap: usize) -> Result<usize> {
    if !(1 <= overlap && overlap < window_len) {
        return Err(Error::Config(format!(
            "need 1 <= overlap < window_len, got {overlap} and {window_len}"
        )));
    }
    if m < window_len {
        return Err(Error::Config(format!(
            "trajectory of {m} cameras is shorter than the window length {window_len}"
        )));
    }
    Ok((m - window_len) / (window_len - overlap) + 1)
}
