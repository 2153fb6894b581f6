use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform.
///
/// A world point `p` maps to camera space as `rotation * p + translation`;
/// the camera looks down `+z` with `+y` pointing down the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down `+z`, principal point at the image center.
    pub fn looking_forward(width: usize, height: usize, focal: f64) -> Result<Self> {
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            Matrix3::identity(),
            Vector3::zeros(),
        )
    }

    /// Camera centered at `eye` oriented so `target` projects onto the principal point.
    pub fn look_at(
        template: &Camera,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid("look_at target coincides with eye"));
        }
        let z = forward.normalize();
        // Image y points down, so the camera's +y axis is the negated up vector.
        let x = (-up).cross(&z);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("look_at up vector is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            template.fx,
            template.fy,
            template.cx,
            template.cy,
            template.width,
            template.height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "resolution must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "extrinsic rotation is not orthonormal (deviation {err})"
            )));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates of a camera-space point; pixel centers sit at integer coordinates.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn same_resolution(&self, other: &Camera) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Ordered camera path. Index `i` in the slice is frame `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    cameras: Vec<Camera>,
}

impl Trajectory {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let first = cameras
            .first()
            .ok_or_else(|| Error::invalid("trajectory needs at least one camera"))?;
        if let Some(i) = cameras.iter().position(|c| !c.same_resolution(first)) {
            return Err(Error::invalid(format!(
                "camera {} has resolution {}x{}, expected {}x{}",
                i + 1,
                cameras[i].width,
                cameras[i].height,
                first.width,
                first.height
            )));
        }
        for c in &cameras {
            c.validate()?;
        }
        Ok(Self { cameras })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    /// Camera for the 1-based frame index `i`.
    pub fn get(&self, i: usize) -> Option<&Camera> {
        i.checked_sub(1).and_then(|k| self.cameras.get(k))
    }

    /// Sub-trajectory covering the inclusive 1-based index range.
    pub fn slice(&self, first: usize, last: usize) -> Result<Trajectory> {
        if first == 0 || last < first || last > self.cameras.len() {
            return Err(Error::invalid(format!(
                "frame range [{first}, {last}] outside trajectory of length {}",
                self.cameras.len()
            )));
        }
        Ok(Trajectory {
            cameras: self.cameras[first - 1..last].to_vec(),
        })
    }

    pub fn into_cameras(self) -> Vec<Camera> {
        self.cameras
    }
}
