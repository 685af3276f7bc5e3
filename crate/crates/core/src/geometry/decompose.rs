use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::{CameraIntrinsics, Homography, PixelPoint};
use crate::error::{Error, Result};

/// One analytic solution of `Hc = R + (t/d)·Nᵀ`, with `X₂ = R·X₁ + t` and the
/// plane `Nᵀ·X₁ = d` in first-camera coordinates (`N` points from the camera
/// towards the plane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlaneMotion {
    pub rotation: Matrix3<f64>,
    pub translation_direction: Vector3<f64>,
    pub plane_normal: Vector3<f64>,
    /// `‖t‖/d`, the translation magnitude relative to the plane distance.
    pub translation_over_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Decomposition {
    /// Up to four candidate motions; at most two survive the visibility filter.
    Planar(Vec<PlaneMotion>),
    /// No translation (identity or pure rotation); the plane normal is unobservable.
    Degenerate { rotation: Matrix3<f64> },
}

const DEGENERATE_SPREAD: f64 = 1e-9;

/// Analytic decomposition of a plane-induced homography (Faugeras' SVD method).
pub fn decompose_homography(h: &Homography, k: &CameraIntrinsics) -> Result<Decomposition> {
    let mut hc = k.inverse_matrix() * h.matrix() * k.matrix();
    let sv = hc.singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 0.0) {
        return Err(Error::DegenerateConfiguration("homography is singular".into()));
    }
    hc /= s[1];
    if hc.determinant() < 0.0 {
        hc = -hc;
    }

    let svd = (hc.transpose() * hc).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.eigenvalues[j].total_cmp(&svd.eigenvalues[i]));
    let s1 = svd.eigenvalues[order[0]];
    let s3 = svd.eigenvalues[order[2]].max(0.0);
    let v1: Vector3<f64> = svd.eigenvectors.column(order[0]).into();
    let v2: Vector3<f64> = svd.eigenvectors.column(order[1]).into();
    let mut v3: Vector3<f64> = svd.eigenvectors.column(order[2]).into();
    if v1.cross(&v2).dot(&v3) < 0.0 {
        v3 = -v3;
    }

    if s1 - s3 < DEGENERATE_SPREAD {
        return Ok(Decomposition::Degenerate {
            rotation: nearest_rotation(&hc),
        });
    }

    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let norm = (s1 - s3).sqrt();
    let u1 = (a * v1 + b * v3) / norm;
    let u2 = (a * v1 - b * v3) / norm;

    let mut out = Vec::with_capacity(4);
    for u in [u1, u2] {
        let big_u = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let hv2 = hc * v2;
        let hu = hc * u;
        let big_w = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let rotation = big_w * big_u.transpose();
        let normal = v2.cross(&u);
        let t = (hc - rotation) * normal;
        let t_norm = t.norm();
        let dir = if t_norm > 0.0 { t / t_norm } else { t };
        out.push(PlaneMotion {
            rotation,
            translation_direction: dir,
            plane_normal: normal,
            translation_over_distance: t_norm,
        });
        out.push(PlaneMotion {
            rotation,
            translation_direction: -dir,
            plane_normal: -normal,
            translation_over_distance: t_norm,
        });
    }
    Ok(Decomposition::Planar(out))
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        r = u * fix * v_t;
    }
    r
}

/// Keeps the candidates for which every observed plane point lies in front of
/// the first camera and whose normal has a positive component along the
/// camera's down axis, then returns the one closest to straight down.
pub fn select_physical(
    decomposition: &Decomposition,
    k: &CameraIntrinsics,
    plane_points: &[PixelPoint],
) -> Result<PlaneMotion> {
    let candidates = match decomposition {
        Decomposition::Degenerate { .. } => {
            return Err(Error::NoPhysicalSolution(
                "degenerate motion: no translation between the views".into(),
            ))
        }
        Decomposition::Planar(c) => c,
    };
    let rays: Vec<Vector3<f64>> = plane_points.iter().map(|p| k.back_project(*p)).collect();
    candidates
        .iter()
        .filter(|m| m.plane_normal.y > 0.0)
        .filter(|m| rays.iter().all(|r| m.plane_normal.dot(r) > 0.0))
        .max_by(|a, b| a.plane_normal.y.total_cmp(&b.plane_normal.y))
        .copied()
        .ok_or_else(|| {
            Error::NoPhysicalSolution("every candidate fails the visibility filter".into())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_between;
    use nalgebra::Rotation3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 780.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn compose(r: &Matrix3<f64>, t: &Vector3<f64>, n: &Vector3<f64>, d: f64) -> Homography {
        let k = k();
        Homography::new(k.matrix() * (r + t * n.transpose() / d) * k.inverse_matrix()).unwrap()
    }

    #[test]
    fn recovers_known_decomposition() {
        let r = *Rotation3::from_euler_angles(0.05, -0.1, 0.02).matrix();
        let t = Vector3::new(0.1, -0.05, -0.3);
        let n = Vector3::new(0.1, 0.9, 0.3).normalize();
        let h = compose(&r, &t, &n, 0.6);
        let Decomposition::Planar(cands) = decompose_homography(&h, &k()).unwrap() else {
            panic!("expected planar decomposition");
        };
        assert_eq!(cands.len(), 4);
        let hit = cands.iter().any(|c| {
            angle_between(&c.plane_normal, &n) < 1e-6
                && (c.rotation - r).abs().max() < 1e-6
                && angle_between(&c.translation_direction, &t) < 1e-6
                && (c.translation_over_distance - t.norm() / 0.6).abs() < 1e-6
        });
        assert!(hit, "{cands:#?}");
    }

    #[test]
    fn identity_is_degenerate() {
        let d = decompose_homography(&Homography::identity(), &k()).unwrap();
        match d {
            Decomposition::Degenerate { rotation } => {
                assert!((rotation - Matrix3::identity()).abs().max() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            select_physical(&d, &k(), &[]),
            Err(Error::NoPhysicalSolution(_))
        ));
    }

    #[test]
    fn pure_rotation_is_degenerate() {
        let r = *Rotation3::from_euler_angles(0.1, 0.2, -0.05).matrix();
        let h = compose(&r, &Vector3::zeros(), &Vector3::y(), 1.0);
        match decompose_homography(&h, &k()).unwrap() {
            Decomposition::Degenerate { rotation } => {
                assert!((rotation - r).abs().max() < 1e-9)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn visibility_filter_keeps_true_normal() {
        let r = *Rotation3::from_euler_angles(0.0, 0.03, 0.0).matrix();
        let t = Vector3::new(0.02, 0.05, -0.4);
        let n = Vector3::new(0.0, 25f64.to_radians().cos(), 25f64.to_radians().sin());
        let h = compose(&r, &t, &n, 0.6);
        let pts: Vec<PixelPoint> = [(100.0, 300.0), (500.0, 320.0), (320.0, 450.0), (200.0, 400.0)]
            .iter()
            .map(|&(u, v)| PixelPoint::new(u, v))
            .collect();
        let dec = decompose_homography(&h, &k()).unwrap();
        let best = select_physical(&dec, &k(), &pts).unwrap();
        assert!(angle_between(&best.plane_normal, &n) < 1e-6);
    }
}
