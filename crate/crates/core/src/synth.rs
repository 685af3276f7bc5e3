//! Synthetic reflective-floor scenes: exact two-view correspondences for the
//! geometry oracle, a ray-cast renderer with mirrored reflections, and the
//! pose and blur perturbations used by the robustness harness.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{CorrespondenceProvider, TrackedPoint};
use crate::geometry::{
    yaw_rotation, CameraIntrinsics, Extrinsics, GroundPlane, PixelPoint, PlanarPose, Pose,
};
use crate::image::{LabelImage, RgbImage, FIRST_INSTANCE, LABEL_BACKGROUND, LABEL_FLOOR};

/// Reflection colour weight; the floor keeps the rest.
pub const REFLECTION_WEIGHT: f32 = 0.6;

/// Box resting on (or floating above) the floor, rotated by `yaw` about the vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    /// Footprint centre `(x, y)` in metres.
    pub center: [f64; 2],
    /// `(length, width, height)` in metres.
    pub size: [f64; 3],
    /// Height of the bottom face above the floor.
    #[serde(default)]
    pub base_z: f64,
    #[serde(default)]
    pub yaw: f64,
    pub color: [f32; 3],
}

impl Cuboid {
    fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("cuboid sizes must be positive"));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("cuboid colours must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The eight corners in world coordinates.
    pub fn corners(&self) -> Vec<Vector3<f64>> {
        let r = yaw_rotation(self.yaw);
        let c = Vector3::new(self.center[0], self.center[1], self.base_z);
        let (hx, hy) = (self.size[0] / 2.0, self.size[1] / 2.0);
        let mut out = Vec::with_capacity(8);
        for z in [0.0, self.size[2]] {
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                out.push(c + r * Vector3::new(sx * hx, sy * hy, z));
            }
        }
        out
    }

    /// Ray–box intersection: distance along the ray and outward face normal.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let r_inv = yaw_rotation(-self.yaw);
        let c = Vector3::new(self.center[0], self.center[1], self.base_z + self.size[2] / 2.0);
        let lo = r_inv * (o - c);
        let ld = r_inv * d;
        let half = [self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut axis = 0usize;
        let mut sign = 0.0;
        for a in 0..3 {
            if ld[a].abs() < 1e-15 {
                if lo[a].abs() > half[a] {
                    return None;
                }
                continue;
            }
            let ta = (-half[a] - lo[a]) / ld[a];
            let tb = (half[a] - lo[a]) / ld[a];
            let (near, far, s) = if ta < tb { (ta, tb, -1.0) } else { (tb, ta, 1.0) };
            if near > t0 {
                t0 = near;
                axis = a;
                sign = s;
            }
            t1 = t1.min(far);
        }
        if t0 > t1 || t0 <= 1e-9 {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = sign;
        Some((t0, yaw_rotation(self.yaw) * n))
    }
}

/// Rectangular floor region on `z = 0` with a low-contrast texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub color: [f32; 3],
    /// Peak relative brightness variation of the texture.
    pub texture_contrast: f32,
    /// Texture feature size in metres.
    pub texture_scale_m: f64,
}

impl FloorSpec {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] && x <= self.x_range[1] && y >= self.y_range[0] && y <= self.y_range[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_height")]
    pub camera_height: f64,
    /// Downward tilt of the camera relative to the floor, radians.
    pub camera_pitch: f64,
    pub floor: FloorSpec,
    pub background: [f32; 3],
    pub obstacles: Vec<Cuboid>,
    /// Objects whose mirror images appear on the floor.
    pub reflectors: Vec<Cuboid>,
    pub trajectory: Vec<PlanarPose>,
    #[serde(default = "default_timestep")]
    pub timestep_s: f64,
    pub rng_seed: u64,
}

fn default_height() -> f64 {
    0.6
}

fn default_timestep() -> f64 {
    0.1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.intrinsics.width < 64 || self.intrinsics.height < 64 {
            return Err(Error::invalid("synthetic resolution must be at least 64×64"));
        }
        if !(self.camera_height > 0.0) {
            return Err(Error::invalid("camera height must be positive"));
        }
        if self.trajectory.is_empty() {
            return Err(Error::invalid("trajectory is empty"));
        }
        for o in &self.obstacles {
            o.validate()?;
            if o.base_z < 0.0 {
                return Err(Error::invalid("obstacles must stand on or above the floor"));
            }
        }
        for r in &self.reflectors {
            r.validate()?;
        }
        if self.obstacles.len() + FIRST_INSTANCE as usize > u16::MAX as usize {
            return Err(Error::invalid("too many obstacles"));
        }
        Ok(())
    }

    pub fn ground(&self) -> GroundPlane {
        GroundPlane::horizontal(self.camera_height).expect("validated height")
    }

    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics::forward_pitched(self.camera_height, self.camera_pitch)
    }

    pub fn pose(&self, frame: usize) -> Result<Pose> {
        let p = self
            .trajectory
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("frame {frame} outside the trajectory")))?;
        Ok(self.extrinsics().camera_pose(p))
    }
}

/// Reflection of `x` in the plane `nᵀX = offset`.
pub fn mirror_point(x: &Vector3<f64>, normal: &Vector3<f64>, offset: f64) -> Vector3<f64> {
    let n = normal.normalize();
    x - 2.0 * (n.dot(x) - offset) * n
}

/// Reflection in the canonical floor `z = 0`.
pub fn mirror_floor(x: &Vector3<f64>) -> Vector3<f64> {
    mirror_point(x, &Vector3::z(), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Floor,
    Obstacle,
    Reflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub world: Vector3<f64>,
    pub x_t: PixelPoint,
    pub a_prev: PixelPoint,
    /// Signed height above the floor.
    pub height: f64,
    pub kind: PointKind,
}

/// Exact correspondences of one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFrame {
    pub frame: usize,
    pub prev: usize,
    pub pose_t: Pose,
    pub pose_prev: Pose,
    pub points: Vec<OraclePoint>,
    /// Points dropped because they lie behind one of the cameras.
    pub behind_camera: usize,
    pub labels: LabelImage,
}

/// Projects `x` into both views; `None` when it is behind either camera.
pub fn oracle_point(
    k: &CameraIntrinsics,
    pose_t: &Pose,
    pose_prev: &Pose,
    x: &Vector3<f64>,
    kind: PointKind,
) -> Option<OraclePoint> {
    Some(OraclePoint {
        world: *x,
        x_t: k.project(pose_t, x)?,
        a_prev: k.project(pose_prev, x)?,
        height: x.z,
        kind,
    })
}

/// Floor grid, obstacle surface samples and mirrored reflector samples,
/// projected exactly into frames `frame` and `prev`.
pub fn generate_oracle(spec: &SceneSpec, frame: usize, prev: usize) -> Result<OracleFrame> {
    spec.validate()?;
    let pose_t = spec.pose(frame)?;
    let pose_prev = spec.pose(prev)?;
    let k = &spec.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ (frame as u64).wrapping_mul(0x9E37_79B9));
    let mut candidates: Vec<(Vector3<f64>, PointKind)> = Vec::new();
    let f = &spec.floor;
    let steps = 12;
    for i in 0..=steps {
        for j in 0..=steps {
            let x = f.x_range[0] + (f.x_range[1] - f.x_range[0]) * i as f64 / steps as f64;
            let y = f.y_range[0] + (f.y_range[1] - f.y_range[0]) * j as f64 / steps as f64;
            candidates.push((Vector3::new(x, y, 0.0), PointKind::Floor));
        }
    }
    let surface = |c: &Cuboid, rng: &mut ChaCha8Rng| {
        let r = yaw_rotation(c.yaw);
        let local = Vector3::new(
            (rng.random::<f64>() - 0.5) * c.size[0],
            (rng.random::<f64>() - 0.5) * c.size[1],
            // stay strictly off the floor plane
            c.size[2] * (0.05 + 0.95 * rng.random::<f64>()),
        );
        Vector3::new(c.center[0], c.center[1], c.base_z) + r * local
    };
    for o in &spec.obstacles {
        for p in o.corners().into_iter().filter(|p| p.z > 0.0) {
            candidates.push((p, PointKind::Obstacle));
        }
        for _ in 0..16 {
            candidates.push((surface(o, &mut rng), PointKind::Obstacle));
        }
    }
    for r in &spec.reflectors {
        for p in r.corners().into_iter().filter(|p| p.z > 0.0) {
            candidates.push((mirror_floor(&p), PointKind::Reflection));
        }
        for _ in 0..16 {
            candidates.push((mirror_floor(&surface(r, &mut rng)), PointKind::Reflection));
        }
    }
    let mut points = Vec::new();
    let mut behind = 0;
    for (x, kind) in candidates {
        match oracle_point(k, &pose_t, &pose_prev, &x, kind) {
            Some(p) => points.push(p),
            None => behind += 1,
        }
    }
    if behind > 0 {
        log::debug!("oracle frame {frame}: {behind} points behind a camera");
    }
    let (_, labels) = render_view(spec, &pose_t, false);
    Ok(OracleFrame {
        frame,
        prev,
        pose_t,
        pose_prev,
        points,
        behind_camera: behind,
        labels,
    })
}

#[derive(Debug, Clone, Copy)]
enum Hit {
    Nothing,
    OutsideFloor,
    Floor(Vector3<f64>),
    Obstacle(usize, f64, Vector3<f64>),
    Reflector(usize, f64, Vector3<f64>),
}

fn nearest_cuboid(list: &[Cuboid], o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(usize, f64, Vector3<f64>)> {
    let mut best: Option<(usize, f64, Vector3<f64>)> = None;
    for (i, c) in list.iter().enumerate() {
        if let Some((t, n)) = c.intersect(o, d) {
            if best.is_none_or(|b| t < b.1) {
                best = Some((i, t, n));
            }
        }
    }
    best
}

fn cast(spec: &SceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
    let mut best = Hit::Nothing;
    let mut best_t = f64::INFINITY;
    if d.z < -1e-12 {
        let t = -o.z / d.z;
        if t > 0.0 {
            let p = o + t * d;
            best_t = t;
            best = if spec.floor.contains(p.x, p.y) {
                Hit::Floor(p)
            } else {
                Hit::OutsideFloor
            };
        }
    }
    if let Some((i, t, n)) = nearest_cuboid(&spec.obstacles, o, d) {
        if t < best_t {
            best_t = t;
            best = Hit::Obstacle(i, t, n);
        }
    }
    if let Some((i, t, n)) = nearest_cuboid(&spec.reflectors, o, d) {
        if t < best_t {
            best = Hit::Reflector(i, t, n);
        }
    }
    best
}

fn shade(color: [f32; 3], normal: &Vector3<f64>) -> [f32; 3] {
    let light = Vector3::new(-0.4, 0.3, 0.85).normalize();
    let lambert = normal.dot(&light).max(0.0) as f32;
    let f = 0.55 + 0.45 * lambert;
    [color[0] * f, color[1] * f, color[2] * f]
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f32 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(seed: u64, x: f64, y: f64) -> f32 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = ((x - fx) as f32, (y - fy) as f32);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn floor_color(spec: &SceneSpec, p: &Vector3<f64>) -> [f32; 3] {
    let f = &spec.floor;
    let s = f.texture_scale_m;
    let n = 0.65 * value_noise(spec.rng_seed, p.x / s, p.y / s)
        + 0.35 * value_noise(spec.rng_seed.wrapping_add(1), 2.3 * p.x / s, 2.3 * p.y / s);
    let g = 1.0 + f.texture_contrast * (2.0 * n - 1.0);
    [f.color[0] * g, f.color[1] * g, f.color[2] * g]
}

fn ray_dir(k: &CameraIntrinsics, pose: &Pose, x: f64, y: f64) -> Vector3<f64> {
    let cam = k.back_project(PixelPoint::new(x, y));
    (pose.rotation().transpose() * cam).normalize()
}

/// Colour and label of the scene along one viewing ray.
fn trace(spec: &SceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> ([f32; 3], u16) {
    match cast(spec, o, d) {
        Hit::Nothing | Hit::OutsideFloor => (spec.background, LABEL_BACKGROUND),
        Hit::Obstacle(i, _, n) => (shade(spec.obstacles[i].color, &n), FIRST_INSTANCE + i as u16),
        Hit::Reflector(i, _, n) => (shade(spec.reflectors[i].color, &n), LABEL_BACKGROUND),
        Hit::Floor(p) => {
            let base = floor_color(spec, &p);
            let rd = Vector3::new(d.x, d.y, -d.z);
            let color = match nearest_cuboid(&spec.reflectors, &p, &rd) {
                Some((i, _, n)) => {
                    let r = shade(spec.reflectors[i].color, &mirror_normal(&n));
                    let w = REFLECTION_WEIGHT;
                    [
                        (1.0 - w) * base[0] + w * r[0],
                        (1.0 - w) * base[1] + w * r[1],
                        (1.0 - w) * base[2] + w * r[2],
                    ]
                }
                None => base,
            };
            (color, LABEL_FLOOR)
        }
    }
}

/// Normal of the mirrored face, so reflections keep the shading of the real object.
fn mirror_normal(n: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(n.x, n.y, -n.z)
}

fn render_view(spec: &SceneSpec, pose: &Pose, with_color: bool) -> (Option<RgbImage>, LabelImage) {
    let k = &spec.intrinsics;
    let (w, h) = (k.width, k.height);
    let o = *pose.center();
    let mut labels = Vec::with_capacity(w as usize * h as usize);
    let mut colors = Vec::with_capacity(if with_color { labels.capacity() } else { 0 });
    for y in 0..h {
        for x in 0..w {
            let d = ray_dir(k, pose, x as f64, y as f64);
            let (c, l) = trace(spec, &o, &d);
            labels.push(l);
            if with_color {
                colors.push([c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]);
            }
        }
    }
    let labels = LabelImage::new(w, h, labels).expect("sized buffer");
    let img = with_color.then(|| RgbImage::new(w, h, colors).expect("clamped colours"));
    (img, labels)
}

/// Renders one frame: colour image and ground-truth labels (reflections carry the floor label).
pub fn render(spec: &SceneSpec, frame: usize) -> Result<(RgbImage, LabelImage)> {
    spec.validate()?;
    let pose = spec.pose(frame)?;
    let (img, labels) = render_view(spec, &pose, true);
    Ok((img.expect("colour requested"), labels))
}

/// The scene point seen through pixel `p` of `pose`, with reflections
/// replaced by their virtual position below the floor. `None` for background.
pub fn scene_point(spec: &SceneSpec, pose: &Pose, p: PixelPoint) -> Option<Vector3<f64>> {
    let o = *pose.center();
    let d = ray_dir(&spec.intrinsics, pose, p.u, p.v);
    match cast(spec, &o, &d) {
        Hit::Nothing | Hit::OutsideFloor => None,
        Hit::Obstacle(_, t, _) | Hit::Reflector(_, t, _) => Some(o + t * d),
        Hit::Floor(q) => {
            let rd = Vector3::new(d.x, d.y, -d.z);
            match nearest_cuboid(&spec.reflectors, &q, &rd) {
                Some((_, t, _)) => Some(mirror_floor(&(q + t * rd))),
                None => Some(q),
            }
        }
    }
}

/// Exact correspondences from scene geometry, bypassing image-based tracking.
/// Background pixels are treated as points at infinity.
pub struct SceneCorrespondences<'a> {
    spec: &'a SceneSpec,
    pose_t: Pose,
    pose_prev: Pose,
}

impl<'a> SceneCorrespondences<'a> {
    pub fn new(spec: &'a SceneSpec, pose_t: Pose, pose_prev: Pose) -> Self {
        Self {
            spec,
            pose_t,
            pose_prev,
        }
    }
}

impl CorrespondenceProvider for SceneCorrespondences<'_> {
    fn correspondences(&self, points: &[PixelPoint]) -> Result<Vec<TrackedPoint>> {
        let k = &self.spec.intrinsics;
        Ok(points
            .iter()
            .map(|&p| {
                let a = match scene_point(self.spec, &self.pose_t, p) {
                    Some(x) => k.project(&self.pose_prev, &x),
                    None => {
                        let d = ray_dir(k, &self.pose_t, p.u, p.v);
                        let cam = self.pose_prev.rotation() * d;
                        (cam.z > 1e-12)
                            .then(|| PixelPoint::from_homogeneous(&(k.matrix() * cam)))
                            .flatten()
                    }
                };
                match a {
                    Some(a) => TrackedPoint {
                        x_t: p,
                        a_prev: a,
                        x_back: p,
                        fb_error: 0.0,
                        track_ok: true,
                    },
                    None => TrackedPoint {
                        x_t: p,
                        a_prev: p,
                        x_back: p,
                        fb_error: crate::flow::FAILED_TRACK,
                        track_ok: false,
                    },
                }
            })
            .collect())
    }
}

/// Odometry noise applied to the current pose of a frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseNoise {
    /// Per-axis relative error bound on the translation between the two poses.
    pub translation_frac: f64,
    /// Yaw error magnitude band in radians; the sign is random.
    pub rotation_rad: [f64; 2],
}

impl PoseNoise {
    pub fn is_zero(&self) -> bool {
        self.translation_frac == 0.0 && self.rotation_rad == [0.0, 0.0]
    }
}

/// Scales the odometry step per axis by `1 + ε` and adds a yaw error.
pub fn perturb_pose(prev: &PlanarPose, cur: &PlanarPose, noise: &PoseNoise, rng: &mut impl Rng) -> PlanarPose {
    if noise.is_zero() {
        return *cur;
    }
    let tf = noise.translation_frac.abs();
    let mut eps = || if tf > 0.0 { rng.random_range(-tf..=tf) } else { 0.0 };
    let (ex, ey) = (eps(), eps());
    let [lo, hi] = noise.rotation_rad;
    let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    PlanarPose {
        x: prev.x + (cur.x - prev.x) * (1.0 + ex),
        y: prev.y + (cur.y - prev.y) * (1.0 + ey),
        theta: cur.theta + sign * mag,
    }
}

/// Motion blur with a length-`k` line kernel; a random angle in `[−π, π]`
/// is drawn when none is given.
pub fn blur_frame(img: &RgbImage, k: u32, angle: Option<f64>, rng: &mut impl Rng) -> Result<RgbImage> {
    if k != 0 && k.is_multiple_of(2) {
        return Err(Error::invalid("blur kernel size must be odd or 0"));
    }
    let angle = angle.unwrap_or_else(|| rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI));
    Ok(img.motion_blur(k, angle))
}

/// Knobs of the random benchmark scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    pub camera_height: f64,
    pub camera_pitch: f64,
    pub n_frames: usize,
    pub step_m: f64,
    pub obstacles: [usize; 2],
    /// Range of obstacle distances ahead of the last pose, metres.
    pub obstacle_distance_m: [f64; 2],
    /// Range of obstacle footprint sides, metres.
    pub obstacle_footprint_m: [f64; 2],
    pub obstacle_height_m: [f64; 2],
    pub reflectors: [usize; 2],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            focal_px: 400.0,
            camera_height: 0.6,
            camera_pitch: 22f64.to_radians(),
            n_frames: 30,
            step_m: 0.05,
            obstacles: [1, 3],
            obstacle_distance_m: [1.2, 2.2],
            obstacle_footprint_m: [0.2, 0.35],
            obstacle_height_m: [0.15, 0.3],
            reflectors: [2, 4],
        }
    }
}

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.2, 0.15],
    [0.15, 0.35, 0.8],
    [0.9, 0.75, 0.1],
    [0.2, 0.65, 0.3],
    [0.1, 0.1, 0.12],
    [0.95, 0.95, 0.92],
    [0.6, 0.25, 0.65],
    [0.95, 0.5, 0.1],
];

/// Random desk-scale scene: straight forward drive across a textured floor with
/// low obstacles ahead and tall or ceiling-mounted reflectors whose mirror images
/// land on the floor.
pub fn random_scene(seed: u64, params: &SceneParams) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let travel = params.step_m * (params.n_frames.saturating_sub(1)) as f64;
    let trajectory = (0..params.n_frames)
        .map(|i| PlanarPose::new(i as f64 * params.step_m, 0.0, 0.0))
        .collect();
    let n_obs = rng.random_range(params.obstacles[0]..=params.obstacles[1].max(params.obstacles[0]));
    let mut obstacles: Vec<Cuboid> = Vec::new();
    let mut attempts = 0;
    while obstacles.len() < n_obs && attempts < 200 {
        attempts += 1;
        let [f0, f1] = params.obstacle_footprint_m;
        let size = [
            rng.random_range(f0..f1),
            rng.random_range(f0..f1),
            rng.random_range(params.obstacle_height_m[0]..params.obstacle_height_m[1]),
        ];
        let center = [
            travel + rng.random_range(params.obstacle_distance_m[0]..params.obstacle_distance_m[1]),
            rng.random_range(-0.55..0.55),
        ];
        let clear = obstacles.iter().all(|o| {
            let dx = o.center[0] - center[0];
            let dy = o.center[1] - center[1];
            dx.hypot(dy) > 0.45
        });
        if clear {
            obstacles.push(Cuboid {
                center,
                size,
                base_z: 0.0,
                yaw: rng.random_range(-0.6..0.6),
                color: PALETTE[rng.random_range(0..PALETTE.len())],
            });
        }
    }
    let floor_far = travel + 4.0;
    let n_ref = rng.random_range(params.reflectors[0]..=params.reflectors[1].max(params.reflectors[0]));
    let mut reflectors = Vec::new();
    for i in 0..n_ref {
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        let r = if i % 2 == 0 {
            // tall furniture beyond the far edge of the floor
            Cuboid {
                center: [floor_far + rng.random_range(0.3..0.8), rng.random_range(-1.2..1.2)],
                size: [0.4, rng.random_range(0.3..0.6), rng.random_range(1.2..2.0)],
                base_z: 0.0,
                yaw: 0.0,
                color,
            }
        } else {
            // ceiling light panel
            Cuboid {
                center: [travel + rng.random_range(1.5..3.5), rng.random_range(-0.8..0.8)],
                size: [rng.random_range(0.25..0.5), rng.random_range(0.25..0.5), 0.05],
                base_z: rng.random_range(1.6..2.2),
                yaw: 0.0,
                color: [0.98, 0.97, 0.9],
            }
        };
        reflectors.push(r);
    }
    let k = CameraIntrinsics::new(
        params.focal_px,
        params.focal_px,
        params.width as f64 / 2.0,
        params.height as f64 / 2.0,
        params.width,
        params.height,
    )
    .expect("valid generator intrinsics");
    SceneSpec {
        intrinsics: k,
        camera_height: params.camera_height,
        camera_pitch: params.camera_pitch,
        floor: FloorSpec {
            x_range: [-1.0, floor_far],
            y_range: [-2.5, 2.5],
            color: [0.58, 0.54, 0.5],
            texture_contrast: 0.05,
            texture_scale_m: 0.12,
        },
        background: [0.32, 0.35, 0.4],
        obstacles,
        reflectors,
        trajectory,
        timestep_s: 0.1,
        rng_seed: seed,
    }
}
