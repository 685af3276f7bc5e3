use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use super::homography::transfer_residuals;
use super::{
    decompose_homography, estimate_homography_dlt, select_physical, CameraIntrinsics,
    GroundPlane, Homography, PixelPoint, Pose,
};
use crate::error::{Error, Result};

/// Homography mapping floor pixels of frame `t` onto frame `t−1`.
///
/// With `X_prev = R·X_t + t` the relative motion and `n_c` the upward floor
/// normal in camera-`t` coordinates, floor points satisfy `−n_cᵀ·X_t = d`, so
/// `H = K·(R − t·n_cᵀ/d)·K⁻¹`.
pub fn ground_homography(
    pose_t: &Pose,
    pose_prev: &Pose,
    ground: &GroundPlane,
    k: &CameraIntrinsics,
) -> Result<Homography> {
    let (r, t) = pose_t.relative_to(pose_prev);
    let n_c = ground.normal_in_camera(pose_t);
    let hc = r - t * n_c.transpose() / ground.height();
    Homography::new(k.matrix() * hc * k.inverse_matrix())
}

/// Image of the camera-`t` center in frame `t−1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Epipole {
    /// Unit-norm homogeneous coordinates.
    pub homogeneous: Vector3<f64>,
    /// `|w| < 1e-12`: the baseline is parallel to the image plane.
    pub at_infinity: bool,
}

impl Epipole {
    pub fn point(&self) -> Option<PixelPoint> {
        if self.at_infinity {
            None
        } else {
            PixelPoint::from_homogeneous(&self.homogeneous)
        }
    }
}

pub fn epipole_prev(pose_t: &Pose, pose_prev: &Pose, k: &CameraIntrinsics) -> Result<Epipole> {
    let baseline = pose_t.center() - pose_prev.center();
    if baseline.norm() <= 1e-12 {
        return Err(Error::DegenerateMotion(
            "camera centers coincide; the epipole is undefined".into(),
        ));
    }
    let h = k.matrix() * (pose_prev.rotation() * baseline);
    let h = h / h.norm();
    Ok(Epipole {
        homogeneous: h,
        at_infinity: h.z.abs() < 1e-12,
    })
}

/// Displacement of the appearance correspondence from the floor transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parallax {
    /// `a − g` in pixels.
    pub vector: Vector2<f64>,
    /// Least-squares scalar with `a − g ≈ rho·(g − e)`. For forward motion
    /// `rho < 0` above the floor, `rho = 0` on it and `rho > 0` below it.
    pub rho: f64,
    /// Perpendicular distance of `a` from the line through `g` and `e`.
    pub collinearity_residual: f64,
}

pub fn ground_pixel_parallax(
    a_prev: PixelPoint,
    g_prev: PixelPoint,
    e_prev: PixelPoint,
) -> Result<Parallax> {
    let p = a_prev.to_vector() - g_prev.to_vector();
    let dir = g_prev.to_vector() - e_prev.to_vector();
    let sep = dir.norm();
    if !(sep > 1e-9) {
        return Err(Error::EpipoleCoincidesWithPoint { separation: sep });
    }
    let rho = p.dot(&dir) / (sep * sep);
    let cross = p.x * dir.y - p.y * dir.x;
    Ok(Parallax {
        vector: p,
        rho,
        collinearity_residual: cross.abs() / sep,
    })
}

/// Outcome of the offline floor calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Upward floor normal in the first camera's frame.
    pub normal: Vector3<f64>,
    pub height_m: f64,
    /// Transfer residual of every marked pair under the fitted homography.
    pub per_pair_residual_px: Vec<f64>,
    #[serde(skip)]
    pub homography: Homography,
}

impl CalibrationReport {
    pub fn ground(&self) -> GroundPlane {
        GroundPlane::new(self.normal, self.height_m).expect("validated at calibration")
    }
}

/// Floor calibration from manually marked floor correspondences between two
/// robot poses. The normal is expressed in the first camera's frame.
pub fn calibrate_ground(
    pairs: &[(PixelPoint, PixelPoint)],
    k: &CameraIntrinsics,
    measured_height: f64,
) -> Result<CalibrationReport> {
    if !(measured_height > 0.0) || !measured_height.is_finite() {
        return Err(Error::invalid("measured camera height must be positive"));
    }
    let h = estimate_homography_dlt(pairs)?;
    let decomposition = decompose_homography(&h, k)?;
    let first: Vec<PixelPoint> = pairs.iter().map(|p| p.0).collect();
    let motion = select_physical(&decomposition, k, &first)?;
    let normal = -motion.plane_normal.normalize();
    Ok(CalibrationReport {
        normal,
        height_m: measured_height,
        per_pair_residual_px: transfer_residuals(&h, pairs),
        homography: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 320.0, 180.0, 640, 360).unwrap()
    }

    /// Forward-looking camera (optical axis along world +x) at `height`.
    fn camera(x: f64, y: f64, yaw: f64, height: f64) -> Pose {
        // camera x → world −y, camera y → world −z, camera z → world +x
        let base = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let r_wc = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix() * base;
        Pose::from_camera_to_world(&Rotation3::from_matrix_unchecked(r_wc), Vector3::new(x, y, height))
    }

    #[test]
    fn identical_poses_give_identity() {
        let p = camera(0.0, 0.0, 0.3, 0.6);
        let g = GroundPlane::horizontal(0.6).unwrap();
        let h = ground_homography(&p, &p, &g, &k()).unwrap();
        assert!(h.distance(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn forward_motion_epipole_is_principal_point() {
        let e = epipole_prev(&camera(1.0, 0.0, 0.0, 0.6), &camera(0.8, 0.0, 0.0, 0.6), &k()).unwrap();
        let p = e.point().unwrap();
        assert!((p.u - 320.0).abs() < 1e-9 && (p.v - 180.0).abs() < 1e-9);
    }

    #[test]
    fn lateral_motion_epipole_at_infinity() {
        let e = epipole_prev(&camera(0.0, 0.3, 0.0, 0.6), &camera(0.0, 0.0, 0.0, 0.6), &k()).unwrap();
        assert!(e.at_infinity);
        assert!(e.point().is_none());
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let p = camera(0.0, 0.0, 0.0, 0.6);
        assert!(matches!(
            epipole_prev(&p, &p, &k()),
            Err(Error::DegenerateMotion(_))
        ));
    }

    #[test]
    fn parallax_of_floor_point_is_zero() {
        let g = PixelPoint::new(100.0, 300.0);
        let p = ground_pixel_parallax(g, g, PixelPoint::new(320.0, 180.0)).unwrap();
        assert_eq!(p.rho, 0.0);
        assert_eq!(p.vector, Vector2::zeros());
        assert_eq!(p.collinearity_residual, 0.0);
    }

    #[test]
    fn parallax_requires_separated_epipole() {
        let g = PixelPoint::new(100.0, 300.0);
        assert!(matches!(
            ground_pixel_parallax(g, g, g),
            Err(Error::EpipoleCoincidesWithPoint { .. })
        ));
    }

    #[test]
    fn parallax_scalar_matches_collinear_construction() {
        let e = PixelPoint::new(320.0, 180.0);
        let g = PixelPoint::new(100.0, 300.0);
        let a = PixelPoint::new(g.u + 0.25 * (g.u - e.u), g.v + 0.25 * (g.v - e.v));
        let p = ground_pixel_parallax(a, g, e).unwrap();
        assert!((p.rho - 0.25).abs() < 1e-12);
        assert!(p.collinearity_residual < 1e-12);
    }

    #[test]
    fn floor_transfer_and_off_plane_residual() {
        let k = k();
        let g = GroundPlane::horizontal(0.6).unwrap();
        let prev = camera(0.0, 0.0, 0.0, 0.6);
        let cur = camera(0.2, 0.0, 0.0, 0.6);
        let h = ground_homography(&cur, &prev, &g, &k).unwrap();
        for &(x, y) in &[(2.0, 0.3), (3.0, -0.5), (1.8, 0.0)] {
            let floor = Vector3::new(x, y, 0.0);
            let xt = k.project(&cur, &floor).unwrap();
            let xp = k.project(&prev, &floor).unwrap();
            assert!(h.transfer(xt).unwrap().distance(xp) < 1e-9);
            let above = Vector3::new(x, y, 0.1);
            let xt = k.project(&cur, &above).unwrap();
            let xp = k.project(&prev, &above).unwrap();
            assert!(h.transfer(xt).unwrap().distance(xp) > 1e-3);
        }
    }

    #[test]
    fn calibration_rejects_bad_height() {
        let pairs = vec![(PixelPoint::new(0.0, 0.0), PixelPoint::new(0.0, 0.0)); 4];
        assert!(calibrate_ground(&pairs, &k(), 0.0).is_err());
    }
}
