//! Camera, pose and plane algebra.
//!
//! Conventions used throughout the crate:
//!
//! * Image points are pixels with the origin at the top-left corner, `u` to the
//!   right and `v` down.
//! * A [`Pose`] stores the world→camera rotation `r` and the camera center `c`
//!   in world coordinates, so a world point `X` projects to `K·r·(X − c)`.
//! * Camera axes are x right, y down, z along the optical axis.
//! * A [`GroundPlane`] stores the floor normal `n` in world coordinates
//!   (pointing from the floor towards the camera) and the perpendicular height
//!   `d` of the camera above the floor.

mod decompose;
mod ground;
mod homography;
mod rig;

pub use decompose::{decompose_homography, select_physical, Decomposition, PlaneMotion};
pub use ground::{
    calibrate_ground, epipole_prev, ground_homography, ground_pixel_parallax, CalibrationReport,
    Epipole, Parallax,
};
pub use homography::{estimate_homography_dlt, Homography};
pub use rig::{Extrinsics, PlanarPose};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sub-pixel image location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn homogeneous(self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    /// Dehomogenize; `None` when the point is at infinity.
    pub fn from_homogeneous(h: &Vector3<f64>) -> Option<Self> {
        if h.z.abs() < 1e-300 {
            return None;
        }
        Some(Self::new(h.x / h.z, h.y / h.z))
    }

    pub fn distance(self, other: PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Pinhole intrinsics with zero skew.
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

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid("principal point u outside the image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("principal point v outside the image"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Projects a world point; `None` when the point is not in front of the camera.
    pub fn project(&self, pose: &Pose, x: &Vector3<f64>) -> Option<PixelPoint> {
        let xc = pose.to_camera(x);
        if xc.z <= 1e-12 {
            return None;
        }
        Some(PixelPoint::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }

    /// Unit-depth ray direction (camera frame) through a pixel.
    pub fn back_project(&self, p: PixelPoint) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }
}

/// Camera pose: world→camera rotation and camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    r: Matrix3<f64>,
    c: Vector3<f64>,
}

impl Pose {
    pub fn new(r: Matrix3<f64>, c: Vector3<f64>) -> Result<Self> {
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(orth <= 1e-9) || !((r.determinant() - 1.0).abs() <= 1e-9) {
            return Err(Error::invalid("pose rotation is not orthonormal with det 1"));
        }
        if !c.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("pose center is not finite"));
        }
        Ok(Self { r, c })
    }

    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            c: Vector3::zeros(),
        }
    }

    /// Builds a pose from the camera→world rotation (camera axes expressed in
    /// world coordinates) and the camera center.
    pub fn from_camera_to_world(r_wc: &Rotation3<f64>, c: Vector3<f64>) -> Self {
        Self {
            r: r_wc.matrix().transpose(),
            c,
        }
    }

    /// World→camera rotation.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.c
    }

    pub fn optical_axis(&self) -> Vector3<f64> {
        self.r.row(2).transpose()
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * (x - self.c)
    }

    /// Relative motion mapping camera-`self` coordinates into camera-`other`
    /// coordinates: `X_other = R·X_self + t`.
    pub fn relative_to(&self, other: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
        let r = other.r * self.r.transpose();
        let t = other.r * (self.c - other.c);
        (r, t)
    }
}

/// Floor plane: unit normal (world frame, floor → camera side) and camera height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    n: Vector3<f64>,
    d: f64,
}

impl GroundPlane {
    /// Normalizes `n`; fails for a zero normal or non-positive height.
    pub fn new(n: Vector3<f64>, d: f64) -> Result<Self> {
        let norm = n.norm();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::invalid("ground normal must be non-zero"));
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::invalid("camera height must be positive"));
        }
        Ok(Self { n: n / norm, d })
    }

    /// Canonical floor `z = 0` seen from a camera at `height` metres.
    pub fn horizontal(height: f64) -> Result<Self> {
        Self::new(Vector3::z(), height)
    }

    /// Re-expresses a plane given in the camera frame of `pose` in world coordinates.
    pub fn from_camera_frame(n_cam: Vector3<f64>, d: f64, pose: &Pose) -> Result<Self> {
        Self::new(pose.rotation().transpose() * n_cam, d)
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.n
    }

    pub fn height(&self) -> f64 {
        self.d
    }

    /// Normal in the camera frame of `pose`.
    pub fn normal_in_camera(&self, pose: &Pose) -> Vector3<f64> {
        pose.rotation() * self.n
    }
}

/// Rotation about the world z axis.
pub fn yaw_rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Angle between two directions in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    a.cross(b).norm().atan2(a.dot(b))
}
