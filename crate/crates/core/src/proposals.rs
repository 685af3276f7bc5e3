//! Edge-map stand-in, top-response edge-point selection and sliding-window
//! box proposals scored by edge density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Per-pixel edge strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    response: Vec<f64>,
}

impl EdgeMap {
    pub fn new(width: u32, height: u32, response: Vec<f64>) -> Result<Self> {
        if response.len() != width as usize * height as usize {
            return Err(Error::invalid("edge map length does not match its size"));
        }
        if !response.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("edge responses must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            response,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn responses(&self) -> &[f64] {
        &self.response
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.response[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeParams {
    /// Keep only local maxima of the gradient magnitude across the edge.
    pub non_max_suppression: bool,
    /// Normalized responses below this value are zeroed.
    pub min_response: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            non_max_suppression: true,
            min_response: 0.1,
        }
    }
}

/// Gradient-magnitude edge detector: 3×3 Sobel magnitude, optionally thinned by
/// non-maximum suppression, divided by the 99th percentile of the non-zero
/// magnitudes and clipped to `[0, 1]`.
pub fn detect_edges(img: &GrayImage, params: &EdgeParams) -> EdgeMap {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let at = |x: isize, y: isize| img.get_clamped(x as i64, y as i64) as f64;
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let mut mag = vec![0.0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx[i] = dx / 8.0;
            gy[i] = dy / 8.0;
            mag[i] = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        }
    }

    let thinned: Vec<f64> = if params.non_max_suppression {
        let m = |x: isize, y: isize| {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                mag[y as usize * w + x as usize]
            }
        };
        (0..w * h)
            .map(|i| {
                let v = mag[i];
                if v <= 0.0 {
                    return 0.0;
                }
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                // quantize the gradient direction to one of four neighbour axes
                let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
                let (ox, oy) = if !(22.5..157.5).contains(&angle) {
                    (1, 0)
                } else if angle < 67.5 {
                    (1, 1)
                } else if angle < 112.5 {
                    (0, 1)
                } else {
                    (-1, 1)
                };
                if v >= m(x + ox, y + oy) && v >= m(x - ox, y - oy) {
                    v
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        mag
    };

    let mut nonzero: Vec<f64> = thinned.iter().copied().filter(|v| *v > 0.0).collect();
    if nonzero.is_empty() {
        return EdgeMap {
            width: w as u32,
            height: h as u32,
            response: vec![0.0; w * h],
        };
    }
    nonzero.sort_by(f64::total_cmp);
    let idx = ((0.99 * (nonzero.len() - 1) as f64).round() as usize).min(nonzero.len() - 1);
    let scale = nonzero[idx];
    let response = thinned
        .iter()
        .map(|v| {
            let r = (v / scale).min(1.0);
            if r < params.min_response {
                0.0
            } else {
                r
            }
        })
        .collect();
    EdgeMap {
        width: w as u32,
        height: h as u32,
        response,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub x: u32,
    pub y: u32,
    pub response: f64,
}

/// The retained edge points, ordered by response (descending, row-major ties).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgePointSet {
    pub points: Vec<EdgePoint>,
}

impl EdgePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keeps the `⌈tau_e·N⌉` strongest of the `N` non-zero edge pixels.
pub fn select_edge_points(edges: &EdgeMap, tau_e: f64) -> Result<EdgePointSet> {
    if !(tau_e > 0.0 && tau_e <= 1.0) {
        return Err(Error::invalid("tau_e must lie in (0, 1]"));
    }
    let w = edges.width as usize;
    let mut points: Vec<EdgePoint> = edges
        .response
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(i, r)| EdgePoint {
            x: (i % w) as u32,
            y: (i / w) as u32,
            response: *r,
        })
        .collect();
    // stable: equal responses keep row-major order
    points.sort_by(|a, b| b.response.total_cmp(&a.response));
    let keep = keep_count(points.len(), tau_e);
    points.truncate(keep);
    Ok(EdgePointSet { points })
}

fn keep_count(n: usize, tau_e: f64) -> usize {
    // tolerate representation error in products such as 0.8·100
    ((tau_e * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Axis-aligned candidate box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: usize,
    pub u: u32,
    pub v: u32,
    pub w: u32,
    pub h: u32,
    pub objectness: f64,
}

impl Proposal {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.u && y >= self.v && x < self.u + self.w && y < self.v + self.h
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= MIN_SIDE && self.h >= MIN_SIDE && self.u + self.w <= width && self.v + self.h <= height
    }
}

pub const MIN_SIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    /// Window sizes: `√(w·h)` in pixels.
    pub scales: Vec<u32>,
    /// Width / height ratios.
    pub aspect_ratios: Vec<f64>,
    pub stride: u32,
    /// Number of proposals kept (`J`).
    pub max_proposals: usize,
    /// Area exponent of the objectness denominator.
    pub kappa: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            scales: vec![32, 64, 128, 256, 512],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride: 16,
            max_proposals: 1000,
            kappa: 1.5,
        }
    }
}

impl ProposalParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_proposals == 0 {
            return Err(Error::invalid("max_proposals (J) must be at least 1"));
        }
        if self.stride == 0 || self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::invalid("proposal grid needs scales, aspect ratios and a stride"));
        }
        if self.aspect_ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("aspect ratios must be positive"));
        }
        Ok(())
    }

    /// Distinct window shapes `(w, h)` of the grid.
    pub fn shapes(&self) -> Vec<(u32, u32)> {
        let mut shapes = Vec::new();
        for &s in &self.scales {
            for &r in &self.aspect_ratios {
                let w = (s as f64 * r.sqrt()).round() as u32;
                let h = (s as f64 / r.sqrt()).round() as u32;
                if w >= MIN_SIDE && h >= MIN_SIDE && !shapes.contains(&(w, h)) {
                    shapes.push((w, h));
                }
            }
        }
        shapes
    }
}

/// Summed-area table over edge-point responses.
pub(crate) struct ResponseIntegral {
    width: usize,
    table: Vec<f64>,
}

impl ResponseIntegral {
    pub(crate) fn new(points: &EdgePointSet, width: u32, height: u32) -> Self {
        let (w, h) = (width as usize, height as usize);
        let mut grid = vec![0.0f64; w * h];
        for p in &points.points {
            grid[p.y as usize * w + p.x as usize] += p.response;
        }
        let stride = w + 1;
        let mut table = vec![0.0f64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += grid[y * w + x];
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self { width: w, table }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    pub(crate) fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.table[y1 * s + x1] - self.table[y0 * s + x1] - self.table[y1 * s + x0]
            + self.table[y0 * s + x0]
    }
}

/// Objectness of one window: summed edge response inside, divided by `area^kappa`.
pub fn objectness(sum: f64, w: u32, h: u32, kappa: f64) -> f64 {
    sum / ((w as f64) * (h as f64)).powf(kappa)
}

/// Enumerates the sliding-window grid and returns the `J` boxes with the
/// highest objectness (ties: smaller area, then row-major position).
pub fn generate_proposals(
    edges: &EdgePointSet,
    img_size: (u32, u32),
    params: &ProposalParams,
) -> Result<Vec<Proposal>> {
    params.validate()?;
    let (width, height) = img_size;
    let integral = ResponseIntegral::new(edges, width, height);
    let shapes = params.shapes();
    let mut all: Vec<Proposal> = shapes
        .par_iter()
        .flat_map_iter(|&(w, h)| {
            let integral = &integral;
            let us = (0..).map(move |i| i * params.stride).take_while(move |u| u + w <= width);
            us.flat_map(move |u| {
                (0..)
                    .map(move |i| i * params.stride)
                    .take_while(move |v| v + h <= height)
                    .map(move |v| {
                        let s = integral.sum(u as usize, v as usize, (u + w) as usize, (v + h) as usize);
                        Proposal {
                            id: 0,
                            u,
                            v,
                            w,
                            h,
                            objectness: objectness(s.max(0.0), w, h, params.kappa),
                        }
                    })
            })
        })
        .collect();
    all.par_sort_by(|a, b| {
        b.objectness
            .total_cmp(&a.objectness)
            .then(a.area().cmp(&b.area()))
            .then(a.v.cmp(&b.v))
            .then(a.u.cmp(&b.u))
            .then(a.w.cmp(&b.w))
    });
    all.truncate(params.max_proposals);
    for (i, p) in all.iter_mut().enumerate() {
        p.id = i;
    }
    Ok(all)
}
