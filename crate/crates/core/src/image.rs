//! In-memory raster types: grayscale, RGB and HSV images with values in `[0, 1]`.

use crate::error::{Error, Result};

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "gray image data has {} values, expected {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("gray image values must be finite and in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f32 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width as usize + x]
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 3]>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid("rgb image data length does not match its size"));
        }
        if !data
            .iter()
            .flatten()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
        {
            return Err(Error::invalid("rgb values must be finite and in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                let c = f(x, y);
                data.push([c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]);
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Luminance `0.299·R + 0.587·G + 0.114·B`.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
                .collect(),
        }
    }

    pub fn to_hsv(&self) -> HsvImage {
        HsvImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| quantize_hsv(rgb_to_hsv(c))).collect(),
        }
    }

    /// Quantizes to 8 bits per channel, the storage format of sequence frames.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid("rgb8 buffer length does not match its size"));
        }
        Ok(Self {
            width,
            height,
            data: bytes
                .chunks_exact(3)
                .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
                .collect(),
        })
    }

    /// Convolution with a normalized line kernel of length `k` oriented at
    /// `angle_rad` (motion blur). `k ≤ 1` returns a copy. Borders are clamped.
    pub fn motion_blur(&self, k: u32, angle_rad: f64) -> RgbImage {
        if k <= 1 {
            return self.clone();
        }
        let taps = line_kernel(k, angle_rad);
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for &(dx, dy, wt) in &taps {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let sy = (y + dy).clamp(0, h - 1) as usize;
                    let c = self.data[sy * w as usize + sx];
                    acc[0] += wt * c[0];
                    acc[1] += wt * c[1];
                    acc[2] += wt * c[2];
                }
                out.push([acc[0].clamp(0.0, 1.0), acc[1].clamp(0.0, 1.0), acc[2].clamp(0.0, 1.0)]);
            }
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data: out,
        }
    }
}

/// Rasterized line kernel: one tap per sample along the segment, merged by
/// integer offset, weights summing to one.
fn line_kernel(k: u32, angle_rad: f64) -> Vec<(i64, i64, f32)> {
    let (s, c) = angle_rad.sin_cos();
    let half = (k as f64 - 1.0) / 2.0;
    let mut taps: Vec<(i64, i64, f32)> = Vec::new();
    for i in 0..k {
        let t = i as f64 - half;
        let dx = (t * c).round() as i64;
        let dy = (t * s).round() as i64;
        match taps.iter_mut().find(|(x, y, _)| *x == dx && *y == dy) {
            Some(tap) => tap.2 += 1.0,
            None => taps.push((dx, dy, 1.0)),
        }
    }
    let total = k as f32;
    taps.iter_mut().for_each(|t| t.2 /= total);
    taps
}

/// HSV image: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
///
/// Channels are stored in fixed point (hue in 1/4096 degree, saturation and
/// value in 2⁻²⁰ steps) so region statistics can be accumulated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    width: u32,
    height: u32,
    data: Vec<[u32; 3]>,
}

pub const HUE_SCALE: u32 = 4096;
pub const SV_SCALE: u32 = 1 << 20;
const HUE_MAX: u32 = 360 * HUE_SCALE - 1;

impl HsvImage {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(quantize_hsv(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    /// Fixed-point channel values.
    pub fn raw(&self) -> &[[u32; 3]] {
        &self.data
    }

    #[inline]
    pub fn raw_at(&self, x: u32, y: u32) -> [u32; 3] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// `(H, S, V)` with H in degrees.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let [h, s, v] = self.raw_at(x, y);
        [
            h as f64 / HUE_SCALE as f64,
            s as f64 / SV_SCALE as f64,
            v as f64 / SV_SCALE as f64,
        ]
    }
}

fn quantize_hsv([h, s, v]: [f32; 3]) -> [u32; 3] {
    let hq = ((h.rem_euclid(360.0) as f64) * HUE_SCALE as f64).round() as u32;
    let sv = |x: f32| ((x.clamp(0.0, 1.0) as f64) * SV_SCALE as f64).round() as u32;
    [hq.min(HUE_MAX), sv(s), sv(v)]
}

/// 18-bin histogram index of a fixed-point channel value: 20° hue sectors,
/// uniform S/V bins over `[0, 1]` with 1.0 in the last bin.
#[inline]
pub fn hsv_bin(channel: usize, raw: u32) -> usize {
    if channel == 0 {
        (raw / (20 * HUE_SCALE)) as usize
    } else {
        ((raw as u64 * 18 / SV_SCALE as u64) as usize).min(17)
    }
}

/// Standard hexcone conversion; achromatic pixels get hue 0.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let mut h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    [h, s.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid("mask data length does not match its size"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|b| **b).count() as u64
    }
}

pub const LABEL_BACKGROUND: u16 = 0;
pub const LABEL_FLOOR: u16 = 1;
/// Obstacle instance ids start here.
pub const FIRST_INSTANCE: u16 = 2;

/// Ground-truth annotation: 0 background, 1 floor, `≥ 2` obstacle instance id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: u32,
    height: u32,
    data: Vec<u16>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid("label data length does not match its size"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Combines a floor mask and per-instance obstacle masks, which must not overlap.
    pub fn from_masks(floor: &Mask, instances: &[Mask]) -> Result<Self> {
        let (w, h) = floor.size();
        let mut data: Vec<u16> = floor.data.iter().map(|f| if *f { LABEL_FLOOR } else { 0 }).collect();
        for (k, m) in instances.iter().enumerate() {
            if m.size() != (w, h) {
                return Err(Error::MaskMismatch("instance mask size differs from floor mask".into()));
            }
            let id = FIRST_INSTANCE as usize + k;
            if id > u16::MAX as usize {
                return Err(Error::MaskMismatch("too many instances".into()));
            }
            for (d, on) in data.iter_mut().zip(&m.data) {
                if *on {
                    if *d != 0 {
                        return Err(Error::MaskMismatch(format!("instance {k} overlaps another label")));
                    }
                    *d = id as u16;
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
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

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn floor_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|l| *l == LABEL_FLOOR).collect(),
        }
    }

    pub fn obstacle_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|l| *l >= FIRST_INSTANCE).collect(),
        }
    }

    /// Sorted distinct obstacle instance ids.
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.data.iter().copied().filter(|l| *l >= FIRST_INSTANCE).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
