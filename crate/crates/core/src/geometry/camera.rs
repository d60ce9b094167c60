use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Camera-frame depth below which a point is treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be nonzero".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside image {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates (`K^-1 [u v 1]`, dehomogenized).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * xy.x + self.cx, self.fy * xy.y + self.cy)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices to within 1e-9 per entry.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entries".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {:.3e})",
                gram.amax()
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose(format!("det(R) = {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub(crate) fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: rotation.into_inner(), translation }
    }

    /// Pose of a camera at `eye` looking at `target`. Image `y` points along
    /// `-up` projected onto the image plane.
    pub fn look_at(
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(up);
        if x.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("viewing direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-R^T T`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }
}

/// Projects a world point to pixels through `K [R | T]`.
pub fn project_point(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    world: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    let cam = pose.to_camera(world);
    if cam.z <= MIN_DEPTH {
        return Err(GeometryError::PointBehindCamera { depth: cam.z });
    }
    Ok(Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy))
}

/// Geodesic angle (radians) of `a * b^T`. Uses `atan2` so tiny angles keep
/// full precision.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a * b.transpose();
    let skew = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (d.trace() - 1.0);
    sin.atan2(cos)
}
