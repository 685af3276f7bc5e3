//! On-disk sequence layout:
//!
//! ```text
//! <dir>/frames/NNNNNN.png      RGB frames, NNNNNN = frame id
//! <dir>/poses.csv              frame_id,timestamp_s,x_m,y_m,theta_rad
//! <dir>/intrinsics.json        {fx, fy, cx, cy, width, height}
//! <dir>/extrinsics.json        camera→odometer {rotation (rows), translation}
//! <dir>/labels/NNNNNN.png      optional; 0 background, 1 floor, ≥2 obstacle id
//! <dir>/ground.json            optional; {normal, height_m} in world coordinates
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{frame_file, read_json, read_labels_png, read_rgb_png, write_json, write_labels_png, write_rgb_png};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Extrinsics, GroundPlane, PlanarPose, Pose};
use crate::image::{LabelImage, RgbImage};
use crate::synth::{blur_frame, render, SceneSpec};

/// Extra slack so equal-to-threshold displacements never pass through rounding.
pub const DISTANCE_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub frame_id: u64,
    pub timestamp_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
}

impl PoseRow {
    pub fn planar(&self) -> PlanarPose {
        PlanarPose::new(self.x_m, self.y_m, self.theta_rad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ExtrinsicsFile {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<&Extrinsics> for ExtrinsicsFile {
    fn from(e: &Extrinsics) -> Self {
        let r = &e.rotation;
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [e.translation.x, e.translation.y, e.translation.z],
        }
    }
}

impl TryFrom<ExtrinsicsFile> for Extrinsics {
    type Error = Error;

    fn try_from(f: ExtrinsicsFile) -> Result<Self> {
        let r = f.rotation;
        Extrinsics::new(
            Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
            Vector3::from(f.translation),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GroundFile {
    normal: [f64; 3],
    height_m: f64,
}

/// A loaded sequence; frames and labels stay on disk until requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub root: PathBuf,
    pub poses: Vec<PoseRow>,
    pub frames: Vec<PathBuf>,
    /// Label file of each frame, if annotated.
    pub labels: Vec<Option<PathBuf>>,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Extrinsics,
    ground: Option<GroundPlane>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn camera_pose(&self, i: usize) -> Pose {
        self.extrinsics.camera_pose(&self.poses[i].planar())
    }

    /// Calibrated floor if present, otherwise the level floor under the extrinsic height.
    pub fn ground(&self) -> Result<GroundPlane> {
        match self.ground {
            Some(g) => Ok(g),
            None => GroundPlane::horizontal(self.extrinsics.translation.z),
        }
    }

    pub fn load_frame(&self, i: usize) -> Result<RgbImage> {
        let img = read_rgb_png(&self.frames[i])?;
        if img.size() != self.intrinsics.size() {
            return Err(Error::SizeMismatch {
                expected: self.intrinsics.size(),
                actual: img.size(),
            });
        }
        Ok(img)
    }

    pub fn load_labels(&self, i: usize) -> Result<Option<LabelImage>> {
        self.labels[i]
            .as_ref()
            .map(|p| {
                let l = read_labels_png(p)?;
                if l.size() != self.intrinsics.size() {
                    return Err(Error::SizeMismatch {
                        expected: self.intrinsics.size(),
                        actual: l.size(),
                    });
                }
                Ok(l)
            })
            .transpose()
    }

    pub fn annotated(&self) -> Vec<usize> {
        (0..self.len()).filter(|i| self.labels[*i].is_some()).collect()
    }
}

/// Parses one dataset layout into a [`SequenceRecord`].
pub fn read_extrinsics(path: &Path) -> Result<Extrinsics> {
    Extrinsics::try_from(read_json::<ExtrinsicsFile>(path)?)
}

/// Writes a calibrated floor in the `ground.json` format.
pub fn write_ground(path: &Path, ground: &GroundPlane) -> Result<()> {
    let n = ground.normal();
    write_json(
        path,
        &GroundFile {
            normal: [n.x, n.y, n.z],
            height_m: ground.height(),
        },
    )
}

/// Adapter for a dataset layout.
pub trait SequenceReader {
    fn read(&self, dir: &Path) -> Result<SequenceRecord>;
}

/// The layout described in the module docs.
pub struct DirectoryLayout;

impl SequenceReader for DirectoryLayout {
    fn read(&self, dir: &Path) -> Result<SequenceRecord> {
        load_sequence(dir)
    }
}

fn read_poses(path: &Path) -> Result<Vec<PoseRow>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["frame_id", "timestamp_s", "x_m", "y_m", "theta_rad"] {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows: Vec<PoseRow> = Vec::new();
    for (i, row) in rdr.deserialize::<PoseRow>().enumerate() {
        let fallback = i as u64 + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(fallback, |p| p.line()),
            message: e.to_string(),
        })?;
        let finite = [row.timestamp_s, row.x_m, row.y_m, row.theta_rad].iter().all(|v| v.is_finite());
        let ordered = rows
            .last()
            .is_none_or(|p| row.timestamp_s >= p.timestamp_s && row.frame_id > p.frame_id);
        if !finite || !ordered {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: fallback,
                message: if finite {
                    "frame ids and timestamps must increase".into()
                } else {
                    "non-finite value".into()
                },
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let poses = read_poses(&dir.join("poses.csv"))?;
    let intrinsics: CameraIntrinsics = read_json(&dir.join("intrinsics.json"))?;
    intrinsics.validate()?;
    let extrinsics = read_extrinsics(&dir.join("extrinsics.json"))?;
    let ground = match read_json::<GroundFile>(&dir.join("ground.json")) {
        Ok(g) => Some(GroundPlane::new(Vector3::from(g.normal), g.height_m)?),
        Err(Error::MissingFile(_)) => None,
        Err(e) => return Err(e),
    };

    let frames_dir = dir.join("frames");
    if !frames_dir.is_dir() {
        return Err(Error::MissingFile(frames_dir));
    }
    let n_png = std::fs::read_dir(&frames_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    if n_png != poses.len() {
        return Err(Error::CountMismatch(format!(
            "{} frames but {} pose rows",
            n_png,
            poses.len()
        )));
    }
    let mut frames = Vec::with_capacity(poses.len());
    let mut labels = Vec::with_capacity(poses.len());
    for p in &poses {
        let f = frame_file(&frames_dir, p.frame_id, "png");
        if !f.is_file() {
            return Err(Error::MissingFile(f));
        }
        frames.push(f);
        let l = frame_file(&dir.join("labels"), p.frame_id, "png");
        labels.push(l.is_file().then_some(l));
    }
    Ok(SequenceRecord {
        root: dir.to_path_buf(),
        poses,
        frames,
        labels,
        intrinsics,
        extrinsics,
        ground,
    })
}

/// Smallest `q ≥ 1` whose camera displacement from frame `t − q` exceeds the threshold.
pub fn select_frame_interval(record: &SequenceRecord, t: usize, threshold_m: f64) -> Result<usize> {
    if t == 0 || t >= record.len() {
        return Err(Error::InsufficientMotion {
            frame: t,
            threshold_m,
        });
    }
    let c_t = *record.camera_pose(t).center();
    (1..=t)
        .find(|&q| (c_t - record.camera_pose(t - q).center()).norm() > threshold_m + DISTANCE_EPS_M)
        .ok_or(Error::InsufficientMotion {
            frame: t,
            threshold_m,
        })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WriteOptions {
    /// Motion-blur kernel length applied to every frame (0 = none).
    pub blur_kernel: u32,
    pub blur_seed: u64,
    pub hash: Option<String>,
}

/// Renders a scene and writes it in the directory layout.
pub fn write_sequence(spec: &SceneSpec, dir: &Path, opts: &WriteOptions) -> Result<SequenceRecord> {
    spec.validate()?;
    let frames_dir = dir.join("frames");
    let labels_dir = dir.join("labels");
    std::fs::create_dir_all(&frames_dir)?;
    std::fs::create_dir_all(&labels_dir)?;
    let hash = opts.hash.as_deref();
    (0..spec.trajectory.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let (img, labels) = render(spec, i)?;
        let img = if opts.blur_kernel > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.blur_seed);
            rng.set_stream(i as u64);
            blur_frame(&img, opts.blur_kernel, None, &mut rng)?
        } else {
            img
        };
        write_rgb_png(&frame_file(&frames_dir, i as u64, "png"), &img, hash)?;
        write_labels_png(&frame_file(&labels_dir, i as u64, "png"), &labels, hash)
    })?;

    let mut w = match hash {
        Some(h) => crate::artifacts::csv_writer(&dir.join("poses.csv"), h)?,
        None => csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(dir.join("poses.csv"))?)),
    };
    for (i, p) in spec.trajectory.iter().enumerate() {
        w.serialize(PoseRow {
            frame_id: i as u64,
            timestamp_s: i as f64 * spec.timestep_s,
            x_m: p.x,
            y_m: p.y,
            theta_rad: p.theta,
        })?;
    }
    w.flush()?;
    write_json(&dir.join("intrinsics.json"), &spec.intrinsics)?;
    write_json(&dir.join("extrinsics.json"), &ExtrinsicsFile::from(&spec.extrinsics()))?;
    load_sequence(dir)
}
