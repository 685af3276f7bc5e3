use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::PixelPoint;
use crate::error::{Error, Result};

/// Projective 3×3 map, kept in a canonical representative of its class:
/// unit Frobenius norm with `h[2][2] ≥ 0` (first non-zero entry positive when
/// `h[2][2] = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3<f64>", into = "Matrix3<f64>")]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("homography has non-finite entries"));
        }
        let sv = m.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min / max < 1e-14 {
            return Err(Error::DegenerateConfiguration(
                "homography matrix is rank deficient".into(),
            ));
        }
        Ok(Self { h: canonical(m) })
    }

    pub fn identity() -> Self {
        Self {
            h: canonical(Matrix3::identity()),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn transfer(&self, p: PixelPoint) -> Option<PixelPoint> {
        PixelPoint::from_homogeneous(&(self.h * p.homogeneous()))
    }

    pub fn inverse(&self) -> Self {
        // rank was checked at construction
        let inv = self.h.try_inverse().expect("homography is invertible");
        Self { h: canonical(inv) }
    }

    /// Frobenius distance between the canonical representatives.
    pub fn distance(&self, other: &Homography) -> f64 {
        (self.h - other.h).norm()
    }
}

impl TryFrom<Matrix3<f64>> for Homography {
    type Error = Error;

    fn try_from(m: Matrix3<f64>) -> Result<Self> {
        Homography::new(m)
    }
}

impl From<Homography> for Matrix3<f64> {
    fn from(h: Homography) -> Self {
        h.h
    }
}

fn canonical(m: Matrix3<f64>) -> Matrix3<f64> {
    let mut m = m / m.norm();
    let pivot = if m[(2, 2)] != 0.0 {
        m[(2, 2)]
    } else {
        // row-major scan for the first non-zero entry
        (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .find(|x| *x != 0.0)
            .unwrap_or(1.0)
    };
    if pivot < 0.0 {
        m = -m;
    }
    m
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to √2.
fn isotropic_normalization(points: &[PixelPoint]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (su, sv) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.u, b + p.v));
    let (cu, cv) = (su / n, sv / n);
    let mean_dist = points
        .iter()
        .map(|p| (p.u - cu).hypot(p.v - cv))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-300 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cu, 0.0, s, -s * cv, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: PixelPoint) -> (f64, f64) {
    let q = t * p.homogeneous();
    (q.x / q.z, q.y / q.z)
}

fn has_collinear_triple(points: &[(f64, f64)]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let ab = (b.0 - a.0, b.1 - a.1);
                let ac = (c.0 - a.0, c.1 - a.1);
                let cross = ab.0 * ac.1 - ab.1 * ac.0;
                let scale = ab.0.hypot(ab.1) * ac.0.hypot(ac.1);
                if scale <= 1e-300 || cross.abs() <= 1e-9 * scale {
                    return true;
                }
            }
        }
    }
    false
}

/// Least-squares homography `x' = H·x` from point pairs `(x, x')` using the
/// normalized direct linear transform.
pub fn estimate_homography_dlt(pairs: &[(PixelPoint, PixelPoint)]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    if pairs
        .iter()
        .any(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(Error::invalid("non-finite correspondence"));
    }
    let src: Vec<PixelPoint> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<PixelPoint> = pairs.iter().map(|p| p.1).collect();
    let t_src = isotropic_normalization(&src);
    let t_dst = isotropic_normalization(&dst);
    let src_n: Vec<(f64, f64)> = src.iter().map(|p| apply(&t_src, *p)).collect();
    let dst_n: Vec<(f64, f64)> = dst.iter().map(|p| apply(&t_dst, *p)).collect();

    if pairs.len() == 4 && (has_collinear_triple(&src_n) || has_collinear_triple(&dst_n)) {
        return Err(Error::DegenerateConfiguration(
            "three of four correspondences are collinear".into(),
        ));
    }

    // pad to at least 9 rows so the SVD yields a full right basis
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(xp, yp))) in src_n.iter().zip(dst_n.iter()).enumerate() {
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = xp * x;
        a[(r, 7)] = xp * y;
        a[(r, 8)] = xp;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = yp * x;
        a[(r + 1, 7)] = yp * y;
        a[(r + 1, 8)] = yp;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest / largest < 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "design matrix has rank below 8".into(),
        ));
    }
    let null = v_t.row(order[8]);
    let h_n = Matrix3::new(
        null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8],
    );
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("normalization not invertible".into()))?;
    Homography::new(t_dst_inv * h_n * t_src)
}

/// Transfer residual of every pair under `h`, in pixels.
pub(crate) fn transfer_residuals(h: &Homography, pairs: &[(PixelPoint, PixelPoint)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|(x, xp)| match h.transfer(*x) {
            Some(p) => p.distance(*xp),
            None => f64::INFINITY,
        })
        .collect()
}
