use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{yaw_rotation, Pose};
use crate::error::{Error, Result};

/// Wheel-odometry pose on the floor plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// Rigid camera→odometer transform: camera axes and camera origin expressed
/// in the odometer frame (x forward, y left, z up, origin on the floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Self {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(orth <= 1e-9) || !((r.determinant() - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid("extrinsic rotation is not a rotation"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("extrinsic translation is not finite"));
        }
        Ok(())
    }

    /// Forward-looking camera `height` metres above the odometer origin,
    /// tilted down by `pitch` radians.
    pub fn forward_pitched(height: f64, pitch: f64) -> Self {
        let (s, c) = pitch.sin_cos();
        let x_cam = Vector3::new(0.0, -1.0, 0.0);
        let y_cam = Vector3::new(-s, 0.0, -c);
        let z_cam = Vector3::new(c, 0.0, -s);
        Self {
            rotation: Matrix3::from_columns(&[x_cam, y_cam, z_cam]),
            translation: Vector3::new(0.0, 0.0, height),
        }
    }

    /// Lifts an odometry pose to the camera pose in world coordinates.
    pub fn camera_pose(&self, p: &PlanarPose) -> Pose {
        let yaw = yaw_rotation(p.theta);
        let r_wc = yaw * self.rotation;
        let c = Vector3::new(p.x, p.y, 0.0) + yaw * self.translation;
        Pose::from_camera_to_world(&Rotation3::from_matrix_unchecked(r_wc), c)
    }
}
