//! Pinhole intrinsics and rigid camera extrinsics.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera. Pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)` and is
/// sampled at its center `(i + 0.5, j + 0.5)`, the COLMAP convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point, equal focal lengths.
    pub fn simple(focal: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid_param(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid_param("image dimensions must be at least 1"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid_param(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid_param(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        let width = ((self.width as f64 * factor).round() as u32).max(1);
        let height = ((self.height as f64 * factor).round() as u32).max(1);
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx * sx).min(width as f64 - 1e-9),
            cy: (self.cy * sy).min(height as f64 - 1e-9),
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// World-to-camera rigid transform `x_cam = R x_world + t`, stamped on the
/// unified timebase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub timestamp_ns: u64,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            timestamp_ns: 0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, timestamp_ns: u64) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
            timestamp_ns,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// From a (w, x, y, z) quaternion; normalizes it first.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>, timestamp_ns: u64) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid_param("zero-norm quaternion"));
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Ok(Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
            timestamp_ns,
        })
    }

    /// Camera looking from `eye` towards `target`; camera +z points forward,
    /// +y points down in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid_param("eye and target coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-12 {
            return Err(Error::invalid_param("up vector parallel to viewing direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // rows are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Self {
            rotation,
            translation,
            timestamp_ns: 0,
        })
    }

    pub fn with_timestamp(mut self, timestamp_ns: u64) -> Self {
        self.timestamp_ns = timestamp_ns;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) {
            return Err(Error::invalid_param(format!(
                "rotation not orthonormal (max |RtR - I| = {ortho:e})"
            )));
        }
        let det = r.determinant();
        if !((det - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid_param(format!("rotation determinant {det} != +1")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_param("non-finite translation"));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            timestamp_ns: self.timestamp_ns,
        }
    }

    /// `self ∘ other`: apply `other` first. Keeps `self`'s timestamp.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            timestamp_ns: self.timestamp_ns,
        }
    }

    /// (w, x, y, z) with w >= 0.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let mut out = [q.w, q.i, q.j, q.k];
        if out[0] < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let c = (r.trace() - 1.0) / 2.0;
        let s = 0.5
            * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
        s.atan2(c)
    }
}
