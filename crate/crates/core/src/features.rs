//! Region features of a proposal: 17 appearance channels, homography error
//! and deviation angle, and the region-level tracking confidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::TrackedPoint;
use crate::geometry::{Homography, Pose};
use crate::image::{hsv_bin, HsvImage};
use crate::proposals::{EdgePointSet, Proposal};

pub const FEATURE_DIM: usize = 19;
pub const APPEARANCE_DIM: usize = 17;
/// Forward–backward error assigned to points whose track failed.
pub const FAILED_TRACK_LAMBDA: f64 = 100.0;
const HIST_BINS: usize = 18;
/// Floor on the mean forward–backward error so `Λ` stays finite.
const MIN_MEAN_LAMBDA: f64 = 1e-12;

/// Per-point parallax cues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPointFeature {
    /// Homography error in pixels.
    pub phi: f64,
    /// Deviation angle in radians, within `[−π/2, π/2]`.
    pub theta: f64,
    /// Forward–backward error in pixels.
    pub lambda: f64,
}

/// Compares the appearance correspondence with the floor transfer of `x_t`.
pub fn point_geometry(tp: &TrackedPoint, h_ground: &Homography, gamma: f64) -> GeoPointFeature {
    let lambda = if tp.track_ok && tp.fb_error.is_finite() {
        tp.fb_error
    } else {
        FAILED_TRACK_LAMBDA
    };
    let (phi, theta) = match h_ground.transfer(tp.x_t) {
        Some(g) if tp.a_prev.is_finite() => {
            let dx = tp.a_prev.u - g.u;
            let dy = tp.a_prev.v - g.v;
            let phi = dx.hypot(dy);
            if phi < 1e-9 {
                (phi, 0.0)
            } else {
                (phi, gamma * (dy / phi).clamp(-1.0, 1.0).asin())
            }
        }
        _ => (0.0, 0.0),
    };
    GeoPointFeature { phi, theta, lambda }
}

/// `+1` when the camera centre moved along its optical axis, `−1` otherwise.
pub fn motion_direction(pose_t: &Pose, pose_prev: &Pose) -> Result<f64> {
    let baseline = pose_t.center() - pose_prev.center();
    if baseline.norm() <= 1e-12 {
        return Err(Error::DegenerateMotion("camera centers coincide".into()));
    }
    Ok(if baseline.dot(&pose_t.optical_axis()) > 0.0 {
        1.0
    } else {
        -1.0
    })
}

/// The 19 channels, stored 0-based (channel `k` at index `k − 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    /// Channels 1–17.
    pub fn appearance(&self) -> &[f64] {
        &self.0[..APPEARANCE_DIM]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn channel(&self, k: usize) -> f64 {
        self.0[k - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub vector: FeatureVector,
    /// `Λ = 1/√(mean λ)`, 0 when the box holds no edge points.
    pub lambda_region: f64,
    pub n_points: usize,
}

/// Half-open integer pixel range `[ceil(a), ceil(b))` clipped to `[0, limit)`.
pub fn pixel_span(a: f64, b: f64, limit: u32) -> (u32, u32) {
    let lo = a.ceil().clamp(0.0, limit as f64) as u32;
    let hi = b.ceil().clamp(0.0, limit as f64) as u32;
    (lo, hi.max(lo))
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn of_box(b: &Proposal) -> Rect {
        Rect {
            x0: b.u,
            y0: b.v,
            x1: b.u + b.w,
            y1: b.v + b.h,
        }
    }

    /// Centred half-size box `(u + w/4, v + h/4, w/2, h/2)`.
    pub fn inner(b: &Proposal, width: u32, height: u32) -> Rect {
        let (u, v, w, h) = (b.u as f64, b.v as f64, b.w as f64, b.h as f64);
        let (x0, x1) = pixel_span(u + w / 4.0, u + w / 4.0 + w / 2.0, width);
        let (y0, y1) = pixel_span(v + h / 4.0, v + h / 4.0 + h / 2.0, height);
        Rect { x0, y0, x1, y1 }
    }

    /// Enlarged box `(u − w/4, v − h/4, 2w, 2h)` clipped to the image.
    pub fn outer(b: &Proposal, width: u32, height: u32) -> Rect {
        let (u, v, w, h) = (b.u as f64, b.v as f64, b.w as f64, b.h as f64);
        let (x0, x1) = pixel_span(u - w / 4.0, u - w / 4.0 + 2.0 * w, width);
        let (y0, y1) = pixel_span(v - h / 4.0, v - h / 4.0 + 2.0 * h, height);
        Rect { x0, y0, x1, y1 }
    }
}

/// `1 − cos(a, b)` of two histograms; 0 when either is empty.
pub fn histogram_contrast(a: &[u64], b: &[u64]) -> f64 {
    let dot: u128 = a.iter().zip(b).map(|(x, y)| *x as u128 * *y as u128).sum();
    let na: u128 = a.iter().map(|x| *x as u128 * *x as u128).sum();
    let nb: u128 = b.iter().map(|x| *x as u128 * *x as u128).sum();
    if na == 0 || nb == 0 {
        return 0.0;
    }
    (1.0 - dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt())).max(0.0)
}

/// Population standard deviation from exact integer moments, rescaled.
fn std_from_moments(n: u64, sum: u128, sum_sq: u128, scale: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as u128;
    let num = n * sum_sq - sum * sum;
    (num as f64).sqrt() / n as f64 / scale
}

/// Quantization level of an edge response for the mode channel.
#[inline]
pub fn response_level(r: f64) -> u32 {
    (r * 255.0).round().clamp(0.0, 255.0) as u32
}

#[derive(Debug, Clone, Copy)]
struct PointRecord {
    x: u32,
    response: f64,
    geo: GeoPointFeature,
}

/// Per-frame accumulation structures shared by all proposals of the frame.
pub struct FeatureExtractor {
    width: u32,
    height: u32,
    /// Edge points bucketed by row, sorted by column.
    rows: Vec<Vec<PointRecord>>,
    /// Integral images of channel moments: `[sum H, sum S, sum V, sum H², sum S², sum V²]`.
    moments: Vec<[u128; 6]>,
    /// Integral histograms, `54` bins per entry (18 per channel).
    hist: Vec<u32>,
}

impl FeatureExtractor {
    pub fn new(edges: &EdgePointSet, geo: &[GeoPointFeature], hsv: &HsvImage) -> Result<Self> {
        if geo.len() != edges.len() {
            return Err(Error::CountMismatch(format!(
                "{} geometry records for {} edge points",
                geo.len(),
                edges.len()
            )));
        }
        let (w, h) = hsv.size();
        let mut rows: Vec<Vec<PointRecord>> = vec![Vec::new(); h as usize];
        for (p, g) in edges.points.iter().zip(geo) {
            if p.x >= w || p.y >= h {
                return Err(Error::invalid("edge point outside the image"));
            }
            rows[p.y as usize].push(PointRecord {
                x: p.x,
                response: p.response,
                geo: *g,
            });
        }
        for row in &mut rows {
            row.sort_by_key(|r| r.x);
        }

        let stride = w as usize + 1;
        let mut moments = vec![[0u128; 6]; stride * (h as usize + 1)];
        let mut hist = vec![0u32; stride * (h as usize + 1) * 3 * HIST_BINS];
        let nb = 3 * HIST_BINS;
        for y in 0..h as usize {
            let mut row_m = [0u128; 6];
            let mut row_h = vec![0u32; nb];
            for x in 0..w as usize {
                let px = hsv.raw()[y * w as usize + x];
                for c in 0..3 {
                    let v = px[c] as u128;
                    row_m[c] += v;
                    row_m[3 + c] += v * v;
                    row_h[c * HIST_BINS + hsv_bin(c, px[c])] += 1;
                }
                let above = y * stride + x + 1;
                let here = (y + 1) * stride + x + 1;
                for k in 0..6 {
                    moments[here][k] = moments[above][k] + row_m[k];
                }
                for k in 0..nb {
                    hist[here * nb + k] = hist[above * nb + k] + row_h[k];
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            rows,
            moments,
            hist,
        })
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn moment_sum(&self, r: &Rect) -> [u128; 6] {
        let s = self.width as usize + 1;
        let at = |x: u32, y: u32| &self.moments[y as usize * s + x as usize];
        let (a, b, c, d) = (at(r.x1, r.y1), at(r.x0, r.y1), at(r.x1, r.y0), at(r.x0, r.y0));
        let mut out = [0u128; 6];
        for k in 0..6 {
            out[k] = a[k] + d[k] - b[k] - c[k];
        }
        out
    }

    fn histogram(&self, r: &Rect) -> [u64; 3 * HIST_BINS] {
        let s = self.width as usize + 1;
        let nb = 3 * HIST_BINS;
        let idx = |x: u32, y: u32| (y as usize * s + x as usize) * nb;
        let (a, b, c, d) = (idx(r.x1, r.y1), idx(r.x0, r.y1), idx(r.x1, r.y0), idx(r.x0, r.y0));
        let mut out = [0u64; 3 * HIST_BINS];
        for k in 0..nb {
            out[k] = (self.hist[a + k] as i64 + self.hist[d + k] as i64
                - self.hist[b + k] as i64
                - self.hist[c + k] as i64) as u64;
        }
        out
    }

    fn for_points_in(&self, r: &Rect, mut f: impl FnMut(&PointRecord)) {
        for y in r.y0..r.y1 {
            let row = &self.rows[y as usize];
            let start = row.partition_point(|p| p.x < r.x0);
            for p in &row[start..] {
                if p.x >= r.x1 {
                    break;
                }
                f(p);
            }
        }
    }

    pub fn extract(&self, b: &Proposal) -> Result<RegionFeatures> {
        let (w_img, h_img) = (self.width, self.height);
        if !b.fits(w_img, h_img) {
            return Err(Error::invalid(format!("proposal {} lies outside the image", b.id)));
        }
        let rect = Rect::of_box(b);
        let mut v = [0.0f64; FEATURE_DIM];

        let mut n = 0usize;
        let mut max_r = 0.0f64;
        let mut sum_r = 0.0;
        let mut sum_phi = 0.0;
        let mut sum_theta = 0.0;
        let mut sum_lambda = 0.0;
        let mut levels = [0u32; 256];
        self.for_points_in(&rect, |p| {
            n += 1;
            max_r = max_r.max(p.response);
            sum_r += p.response;
            sum_phi += p.geo.phi;
            sum_theta += p.geo.theta;
            sum_lambda += p.geo.lambda;
            levels[response_level(p.response) as usize] += 1;
        });
        let inner = Rect::inner(b, w_img, h_img);
        let mut n_inner = 0usize;
        let mut sum_inner = 0.0;
        self.for_points_in(&inner, |p| {
            n_inner += 1;
            sum_inner += p.response;
        });

        let lambda_region;
        if n > 0 {
            let nf = n as f64;
            // first maximum wins, so ties go to the lower level
            let mode_count = levels.iter().copied().max().unwrap_or(0);
            v[0] = max_r;
            v[1] = mode_count as f64 / nf;
            v[2] = sum_r / nf;
            v[3] = if n_inner > 0 {
                sum_inner / n_inner as f64
            } else {
                0.0
            };
            v[17] = sum_phi / nf;
            v[18] = sum_theta / nf;
            lambda_region = 1.0 / (sum_lambda / nf).max(MIN_MEAN_LAMBDA).sqrt();
        } else {
            lambda_region = 0.0;
        }

        let (bw, bh) = (b.w as f64, b.h as f64);
        v[4] = bw * bh / (w_img as f64 * h_img as f64);
        v[5] = bw / bh;
        v[6] = b.u as f64 + bw / 2.0;
        v[7] = b.v as f64 + bh / 2.0;
        v[8] = bw;
        v[9] = bh;
        v[10] = b.objectness;

        let m = self.moment_sum(&rect);
        let area = rect.area();
        let scales = [
            crate::image::HUE_SCALE as f64,
            crate::image::SV_SCALE as f64,
            crate::image::SV_SCALE as f64,
        ];
        for c in 0..3 {
            v[11 + c] = std_from_moments(area, m[c], m[3 + c], scales[c]);
        }

        let outer = Rect::outer(b, w_img, h_img);
        let hb = self.histogram(&rect);
        let ho = self.histogram(&outer);
        for c in 0..3 {
            let range = c * HIST_BINS..(c + 1) * HIST_BINS;
            let inside = &hb[range.clone()];
            let ring: Vec<u64> = ho[range].iter().zip(inside).map(|(o, i)| o - i).collect();
            v[14 + c] = histogram_contrast(inside, &ring);
        }

        Ok(RegionFeatures {
            vector: FeatureVector(v),
            lambda_region,
            n_points: n,
        })
    }
}

/// One-off extraction for a single proposal.
pub fn extract_features(
    b: &Proposal,
    edges: &EdgePointSet,
    hsv: &HsvImage,
    geo: &[GeoPointFeature],
) -> Result<RegionFeatures> {
    FeatureExtractor::new(edges, geo, hsv)?.extract(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PixelPoint;
    use crate::image::RgbImage;
    use crate::proposals::EdgePoint;

    fn proposal(u: u32, v: u32, w: u32, h: u32) -> Proposal {
        Proposal {
            id: 0,
            u,
            v,
            w,
            h,
            objectness: 0.25,
        }
    }

    fn geo(n: usize) -> Vec<GeoPointFeature> {
        vec![
            GeoPointFeature {
                phi: 0.0,
                theta: 0.0,
                lambda: 1.0
            };
            n
        ]
    }

    #[test]
    fn uniform_frame_whole_box() {
        let hsv = RgbImage::filled(64, 48, [0.2, 0.5, 0.7]).to_hsv();
        let f = extract_features(&proposal(0, 0, 64, 48), &EdgePointSet::default(), &hsv, &[]).unwrap();
        let v = f.vector;
        assert_eq!(v.channel(5), 1.0);
        assert_eq!((v.channel(12), v.channel(13), v.channel(14)), (0.0, 0.0, 0.0));
        assert_eq!(v.channel(11), 0.25);
        assert_eq!(f.lambda_region, 0.0);
        assert_eq!(f.n_points, 0);
    }

    #[test]
    fn disjoint_colours_give_full_contrast() {
        let rgb = RgbImage::from_fn(64, 64, |x, y| {
            if (16..48).contains(&x) && (16..48).contains(&y) {
                [1.0, 0.0, 0.0]
            } else {
                [0.1, 0.2, 0.2]
            }
        });
        let f = extract_features(&proposal(16, 16, 32, 32), &EdgePointSet::default(), &rgb.to_hsv(), &[])
            .unwrap();
        for k in 15..=17 {
            assert!((f.vector.channel(k) - 1.0).abs() < 1e-12, "channel {k}");
        }
    }

    #[test]
    fn box_shape_channels() {
        let hsv = RgbImage::filled(200, 100, [0.5; 3]).to_hsv();
        let f = extract_features(&proposal(10, 20, 100, 50), &EdgePointSet::default(), &hsv, &[]).unwrap();
        let v = f.vector;
        assert_eq!(v.channel(6), 2.0);
        assert_eq!((v.channel(7), v.channel(8)), (60.0, 45.0));
        assert_eq!((v.channel(9), v.channel(10)), (100.0, 50.0));
        assert_eq!(v.channel(5), 0.25);
    }

    #[test]
    fn edge_channels_and_confidence() {
        let hsv = RgbImage::filled(32, 32, [0.5; 3]).to_hsv();
        let pts = [(8, 8, 0.5), (9, 8, 0.5), (16, 16, 1.0), (30, 30, 0.9)];
        let edges = EdgePointSet {
            points: pts
                .iter()
                .map(|&(x, y, r)| EdgePoint { x, y, response: r })
                .collect(),
        };
        let mut g = geo(4);
        g[0].lambda = 4.0;
        g[2].phi = 2.0;
        g[2].theta = 0.3;
        let f = extract_features(&proposal(8, 8, 16, 16), &edges, &hsv, &g).unwrap();
        let v = f.vector;
        assert_eq!(f.n_points, 3);
        assert_eq!(v.channel(1), 1.0);
        assert!((v.channel(2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.channel(3) - 2.0 / 3.0).abs() < 1e-15);
        // inner box covers [12, 20)²
        assert_eq!(v.channel(4), 1.0);
        assert!((v.channel(18) - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.channel(19) - 0.1).abs() < 1e-15);
        assert!((f.lambda_region - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mode_ties_prefer_lower_level() {
        let hsv = RgbImage::filled(16, 16, [0.5; 3]).to_hsv();
        let edges = EdgePointSet {
            points: vec![
                EdgePoint { x: 1, y: 1, response: 0.9 },
                EdgePoint { x: 2, y: 1, response: 0.2 },
            ],
        };
        let f = extract_features(&proposal(0, 0, 8, 8), &edges, &hsv, &geo(2)).unwrap();
        assert_eq!(f.vector.channel(2), 0.5);
    }

    #[test]
    fn geometry_of_floor_point_is_zero() {
        let h = Homography::identity();
        let p = PixelPoint::new(10.0, 20.0);
        let tp = TrackedPoint {
            x_t: p,
            a_prev: p,
            x_back: p,
            fb_error: 0.0,
            track_ok: true,
        };
        let g = point_geometry(&tp, &h, 1.0);
        assert_eq!((g.phi, g.theta, g.lambda), (0.0, 0.0, 0.0));
        let up = TrackedPoint {
            a_prev: PixelPoint::new(10.0, 17.0),
            track_ok: false,
            ..tp
        };
        let g = point_geometry(&up, &h, -1.0);
        assert_eq!(g.phi, 3.0);
        assert!((g.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(g.lambda, FAILED_TRACK_LAMBDA);
    }

    #[test]
    fn spans_round_up() {
        assert_eq!(pixel_span(2.25, 6.25, 100), (3, 7));
        assert_eq!(pixel_span(-3.0, 5.0, 4), (0, 4));
    }
}
