//! JSON camera documents: `{"cameras": [{fx, fy, cx, cy, width, height, rotation, translation}]}`.
//!
//! `rotation` is the world-to-camera matrix as nine row-major floats. A bare
//! top-level array of cameras is accepted on input.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Camera, Trajectory};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Document {
    Wrapped { cameras: Vec<CameraRecord> },
    Bare(Vec<CameraRecord>),
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

pub fn cameras_to_json(cameras: &[Camera]) -> String {
    let doc = Document::Wrapped {
        cameras: cameras.iter().map(CameraRecord::from).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("camera records serialize")
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let records = match serde_json::from_value::<Document>(value) {
        Ok(Document::Wrapped { cameras }) | Ok(Document::Bare(cameras)) => cameras,
        Err(_) => return Err(describe_failure(text)),
    };
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Camera::new(
                r.fx,
                r.fy,
                r.cx,
                r.cy,
                r.width,
                r.height,
                Matrix3::from_row_slice(&r.rotation),
                Vector3::from(r.translation),
            )
            .map_err(|e| Error::parse(format!("camera {i}"), e.to_string()))
        })
        .collect()
}

// Untagged enums swallow the precise serde error; re-run the record parser
// element by element to point at the first bad camera.
fn describe_failure(text: &str) -> Error {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()),
    };
    let list = match &value {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(o) => match o.get("cameras") {
            Some(serde_json::Value::Array(a)) => a,
            _ => return Error::parse("document", "expected an object with a `cameras` array"),
        },
        _ => return Error::parse("document", "expected a camera array or object"),
    };
    for (i, item) in list.iter().enumerate() {
        if let Err(e) = serde_json::from_value::<CameraRecord>(item.clone()) {
            return Error::parse(format!("camera {i}"), e.to_string());
        }
    }
    Error::parse("document", "unrecognized camera document")
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    cameras_from_json(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    std::fs::write(path, cameras_to_json(cameras)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::new(read_cameras(path)?)
}
