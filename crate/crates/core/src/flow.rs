//! Pyramidal Lucas–Kanade point tracking and forward–backward error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: u32,
    /// Odd window side length in pixels.
    pub window: u32,
    pub max_iters: u32,
    /// Convergence threshold on the update norm, in pixels of the current level.
    pub eps: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 21,
            max_iters: 30,
            eps: 0.01,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.window < 3 || self.window.is_multiple_of(2) || self.max_iters == 0 {
            return Err(Error::invalid(
                "flow params need levels ≥ 1, an odd window ≥ 3 and max_iters ≥ 1",
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("flow eps must be positive"));
        }
        Ok(())
    }

    pub fn radius(&self) -> u32 {
        self.window / 2
    }

    /// Upper bound on the distance any tracked point can move: every update is
    /// clamped to the window radius and coarse-level motion doubles per level.
    pub fn max_displacement(&self) -> f64 {
        let per_level = self.max_iters as f64 * self.radius() as f64;
        (0..self.levels).map(|l| per_level * (1u64 << l) as f64).sum()
    }
}

/// Minimum eigenvalue of the window-averaged structure tensor below which a
/// point is untrackable.
pub const MIN_EIGENVALUE: f64 = 1e-6;

/// Forward–backward error reported for failed tracks.
pub const FAILED_TRACK: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub x_t: PixelPoint,
    /// Appearance correspondence in frame `t−1`.
    pub a_prev: PixelPoint,
    /// Backward re-track of `a_prev` into frame `t`.
    pub x_back: PixelPoint,
    pub fb_error: f64,
    pub track_ok: bool,
}

struct Level {
    width: usize,
    height: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

impl Level {
    fn from_data(width: usize, height: usize, img: Vec<f32>) -> Self {
        let mut gx = vec![0.0; img.len()];
        let mut gy = vec![0.0; img.len()];
        let at = |x: isize, y: isize| {
            let x = x.clamp(0, width as isize - 1) as usize;
            let y = y.clamp(0, height as isize - 1) as usize;
            img[y * width + x]
        };
        for y in 0..height as isize {
            for x in 0..width as isize {
                let i = y as usize * width + x as usize;
                gx[i] = 0.5 * (at(x + 1, y) - at(x - 1, y));
                gy[i] = 0.5 * (at(x, y + 1) - at(x, y - 1));
            }
        }
        Self {
            width,
            height,
            img,
            gx,
            gy,
        }
    }

    fn downsample(&self) -> Self {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in K.iter().enumerate() {
                    let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += wt * self.img[y * w + sx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let nw = w.div_ceil(2);
        let nh = h.div_ceil(2);
        let mut out = vec![0.0f32; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                let mut acc = 0.0;
                for (k, wt) in K.iter().enumerate() {
                    let sy = (2 * y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += wt * tmp[sy * w + 2 * x];
                }
                out[y * nw + x] = acc;
            }
        }
        Self::from_data(nw, nh, out)
    }

    #[inline]
    fn corners(&self, x: f32, y: f32) -> (usize, usize, usize, usize, f32, f32) {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        (
            y0 * self.width + x0,
            y0 * self.width + x1,
            y1 * self.width + x0,
            y1 * self.width + x1,
            fx,
            fy,
        )
    }

    /// Bilinear samples of the `(2r+1)²` window centred on `(x, y)`, row-major.
    /// Windows away from the border share one set of interpolation weights.
    #[inline]
    fn window(&self, data: &[f32], x: f64, y: f64, r: i32, mut f: impl FnMut(f32)) {
        let (x0, y0) = (x.floor(), y.floor());
        let r64 = r as f64;
        let interior = x0 - r64 >= 0.0
            && y0 - r64 >= 0.0
            && x0 + r64 + 1.0 <= (self.width - 1) as f64
            && y0 + r64 + 1.0 <= (self.height - 1) as f64;
        if !interior {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (i00, i10, i01, i11, fx, fy) = self.corners((x + dx as f64) as f32, (y + dy as f64) as f32);
                    let top = data[i00] + fx * (data[i10] - data[i00]);
                    let bot = data[i01] + fx * (data[i11] - data[i01]);
                    f(top + fy * (bot - top));
                }
            }
            return;
        }
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (w00, w10) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy));
        let (w01, w11) = ((1.0 - fx) * fy, fx * fy);
        let w = self.width;
        let side = (2 * r + 1) as usize;
        for dy in -r..=r {
            let start = (y0 as i64 + dy as i64) as usize * w + (x0 as i64 - r as i64) as usize;
            let top = &data[start..start + side + 1];
            let bot = &data[start + w..start + w + side + 1];
            for i in 0..side {
                f(w00 * top[i] + w10 * top[i + 1] + w01 * bot[i] + w11 * bot[i + 1]);
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Gaussian image pyramid with precomputed central-difference gradients.
pub struct Pyramid {
    levels: Vec<Level>,
    size: (u32, u32),
}

impl Pyramid {
    pub fn new(img: &GrayImage, levels: u32) -> Self {
        let mut out = vec![Level::from_data(
            img.width() as usize,
            img.height() as usize,
            img.data().to_vec(),
        )];
        for _ in 1..levels.max(1) {
            let next = out.last().unwrap().downsample();
            out.push(next);
        }
        Self {
            levels: out,
            size: img.size(),
        }
    }

    pub fn size(&self) -> (u32, u32) {
        self.size
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }
}

fn track_one(from: &Pyramid, to: &Pyramid, p: PixelPoint, params: &FlowParams) -> (PixelPoint, bool) {
    let r = params.radius() as i32;
    let n = ((2 * r + 1) * (2 * r + 1)) as usize;
    let max_step = params.radius() as f64;
    let mut template = Vec::with_capacity(n);
    let mut guess = (0.0f64, 0.0f64);
    let top = from.levels().min(to.levels()) - 1;
    let mut ok = true;

    for level in (0..=top).rev() {
        let scale = 1.0 / (1u64 << level) as f64;
        let (src, dst) = (&from.levels[level], &to.levels[level]);
        let (px, py) = (p.u * scale, p.v * scale);

        template.clear();
        src.window(&src.img, px, py, r, |t| template.push((t, 0.0, 0.0)));
        let mut k = 0;
        src.window(&src.gx, px, py, r, |g| {
            template[k].1 = g;
            k += 1;
        });
        k = 0;
        src.window(&src.gy, px, py, r, |g| {
            template[k].2 = g;
            k += 1;
        });
        let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
        for &(_, gx, gy) in &template {
            gxx += (gx * gx) as f64;
            gxy += (gx * gy) as f64;
            gyy += (gy * gy) as f64;
        }
        let (axx, axy, ayy) = (gxx / n as f64, gxy / n as f64, gyy / n as f64);
        let min_eig = 0.5 * ((axx + ayy) - ((axx - ayy).powi(2) + 4.0 * axy * axy).sqrt());
        if !(min_eig >= MIN_EIGENVALUE) {
            if level == 0 {
                return (PixelPoint::new(p.u + guess.0, p.v + guess.1), false);
            }
            guess = (2.0 * guess.0, 2.0 * guess.1);
            continue;
        }
        let det = gxx * gyy - gxy * gxy;

        let mut nu = (0.0f64, 0.0f64);
        let mut converged = false;
        for _ in 0..params.max_iters {
            let (qx, qy) = (px + guess.0 + nu.0, py + guess.1 + nu.1);
            if !dst.contains(qx, qy) {
                return (PixelPoint::new(p.u + guess.0 / scale, p.v + guess.1 / scale), false);
            }
            let (mut bx, mut by) = (0.0f64, 0.0f64);
            let mut k = 0;
            dst.window(&dst.img, qx, qy, r, |j| {
                let (t, gx, gy) = template[k];
                let diff = (t - j) as f64;
                bx += diff * gx as f64;
                by += diff * gy as f64;
                k += 1;
            });
            let mut step = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            let len = step.0.hypot(step.1);
            if len > max_step {
                step = (step.0 * max_step / len, step.1 * max_step / len);
            }
            nu = (nu.0 + step.0, nu.1 + step.1);
            if len < params.eps {
                converged = true;
                break;
            }
        }
        if level == 0 {
            ok = converged;
            guess = (guess.0 + nu.0, guess.1 + nu.1);
        } else {
            guess = (2.0 * (guess.0 + nu.0), 2.0 * (guess.1 + nu.1));
        }
    }
    let out = PixelPoint::new(p.u + guess.0, p.v + guess.1);
    let inside = from.levels[0].contains(out.u, out.v);
    (out, ok && inside && out.is_finite())
}

/// Tracks `points` from `from` into `to`; each result is the new location and
/// whether tracking converged.
pub fn track(
    from: &GrayImage,
    to: &GrayImage,
    points: &[PixelPoint],
    params: &FlowParams,
) -> Result<Vec<(PixelPoint, bool)>> {
    if from.size() != to.size() {
        return Err(Error::SizeMismatch {
            expected: from.size(),
            actual: to.size(),
        });
    }
    params.validate()?;
    let a = Pyramid::new(from, params.levels);
    let b = Pyramid::new(to, params.levels);
    Ok(track_pyramids(&a, &b, points, params))
}

pub fn track_pyramids(
    from: &Pyramid,
    to: &Pyramid,
    points: &[PixelPoint],
    params: &FlowParams,
) -> Vec<(PixelPoint, bool)> {
    points
        .par_iter()
        .map(|p| {
            if !from.levels[0].contains(p.u, p.v) {
                return (*p, false);
            }
            track_one(from, to, *p, params)
        })
        .collect()
}

/// Tracks `t → t−1` and back, filling the forward–backward error.
pub fn forward_backward(
    points: &[PixelPoint],
    img_t: &GrayImage,
    img_prev: &GrayImage,
    params: &FlowParams,
) -> Result<Vec<TrackedPoint>> {
    if img_t.size() != img_prev.size() {
        return Err(Error::SizeMismatch {
            expected: img_t.size(),
            actual: img_prev.size(),
        });
    }
    params.validate()?;
    let pt = Pyramid::new(img_t, params.levels);
    let pp = Pyramid::new(img_prev, params.levels);
    Ok(forward_backward_pyramids(points, &pt, &pp, params))
}

pub fn forward_backward_pyramids(
    points: &[PixelPoint],
    pyr_t: &Pyramid,
    pyr_prev: &Pyramid,
    params: &FlowParams,
) -> Vec<TrackedPoint> {
    let fwd = track_pyramids(pyr_t, pyr_prev, points, params);
    let prev_pts: Vec<PixelPoint> = fwd.iter().map(|f| f.0).collect();
    let bwd = track_pyramids(pyr_prev, pyr_t, &prev_pts, params);
    points
        .iter()
        .zip(fwd.iter().zip(bwd.iter()))
        .map(|(x_t, (&(a_prev, ok_f), &(x_back, ok_b)))| {
            let track_ok = ok_f && ok_b;
            TrackedPoint {
                x_t: *x_t,
                a_prev,
                x_back,
                fb_error: if track_ok {
                    x_t.distance(x_back)
                } else {
                    FAILED_TRACK
                },
                track_ok,
            }
        })
        .collect()
}

/// Source of `t → t−1` correspondences for edge points. Implemented by the
/// image tracker, by the synthetic oracle and by injected correspondence files.
pub trait CorrespondenceProvider: Sync {
    fn correspondences(&self, points: &[PixelPoint]) -> Result<Vec<TrackedPoint>>;
}

/// Image-based provider running pyramidal LK in both directions.
pub struct LucasKanade {
    pyr_t: Pyramid,
    pyr_prev: Pyramid,
    params: FlowParams,
}

impl LucasKanade {
    pub fn new(img_t: &GrayImage, img_prev: &GrayImage, params: FlowParams) -> Result<Self> {
        if img_t.size() != img_prev.size() {
            return Err(Error::SizeMismatch {
                expected: img_t.size(),
                actual: img_prev.size(),
            });
        }
        params.validate()?;
        Ok(Self {
            pyr_t: Pyramid::new(img_t, params.levels),
            pyr_prev: Pyramid::new(img_prev, params.levels),
            params,
        })
    }
}

impl CorrespondenceProvider for LucasKanade {
    fn correspondences(&self, points: &[PixelPoint]) -> Result<Vec<TrackedPoint>> {
        Ok(forward_backward_pyramids(
            points,
            &self.pyr_t,
            &self.pyr_prev,
            &self.params,
        ))
    }
}
