//! Frame-pair analysis, regressor training and per-frame detection.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    frame_file, read_edges_png, read_flow_csv, read_proposals_json, write_edges_png, write_json,
    write_map_png, write_mask_png, write_proposals_json, FeatureRow,
};
use crate::config::{MapScheme, PipelineConfig, ScoringMode};
use crate::dataset::{select_frame_interval, SequenceRecord};
use crate::error::{Error, Result};
use crate::features::{motion_direction, point_geometry, FeatureExtractor, GeoPointFeature, RegionFeatures};
use crate::flow::{CorrespondenceProvider, LucasKanade, TrackedPoint};
use crate::geometry::{ground_homography, PixelPoint, Pose};
use crate::image::LabelImage;
use crate::model::{agfm_predict, label_samples, Dataset, RegressionForest, SampleClass};
use crate::probmap::{build_map, build_map_nms, segment, ProbabilityMap, ScoredProposal, SegmentationMask};
use crate::proposals::{detect_edges, generate_proposals, select_edge_points, EdgeMap, EdgePointSet, Proposal};
use crate::synth::perturb_pose;

/// Correspondence function for a `(t, t−q)` pair of one sequence.
pub type FlowFn = dyn Fn(usize, usize, &[PixelPoint]) -> Result<Vec<TrackedPoint>> + Send + Sync;

/// Where a stage input comes from. Injected inputs live in one directory and
/// are keyed by frame id (`000123.png`, `.json`, `.csv`).
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Compute,
    Injected(PathBuf),
}

#[derive(Clone, Default)]
pub enum FlowSource {
    #[default]
    Tracker,
    Injected(PathBuf),
    Custom(Arc<FlowFn>),
}

#[derive(Clone, Default)]
pub struct Sources {
    pub edges: Source,
    pub proposals: Source,
    pub flow: FlowSource,
}

/// Everything computed for frame `t` against its reference frame.
pub struct FrameAnalysis {
    pub frame: usize,
    pub prev: usize,
    pub size: (u32, u32),
    pub edges: EdgeMap,
    pub points: EdgePointSet,
    pub tracks: Vec<TrackedPoint>,
    pub geo: Vec<GeoPointFeature>,
    pub proposals: Vec<Proposal>,
    pub features: Vec<RegionFeatures>,
}

/// Camera poses of a pair, with odometry noise drawn from `(seed, t)`.
fn pair_poses(record: &SequenceRecord, t: usize, prev: usize, cfg: &PipelineConfig) -> (Pose, Pose) {
    let pose_prev = record.camera_pose(prev);
    if cfg.pose_noise.is_zero() {
        return (record.camera_pose(t), pose_prev);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(t as u64);
    let noisy = perturb_pose(&record.poses[prev].planar(), &record.poses[t].planar(), &cfg.pose_noise, &mut rng);
    (record.extrinsics.camera_pose(&noisy), pose_prev)
}

/// Injected correspondences are matched to edge points by pixel; points
/// without a row count as failed tracks.
fn injected_flow(path: &Path, points: &[PixelPoint]) -> Result<Vec<TrackedPoint>> {
    let rows = read_flow_csv(path)?;
    let by_pixel: HashMap<(i64, i64), TrackedPoint> = rows
        .into_iter()
        .map(|r| ((r.x_t.u.round() as i64, r.x_t.v.round() as i64), r))
        .collect();
    Ok(points
        .iter()
        .map(|p| {
            by_pixel.get(&(p.u as i64, p.v as i64)).copied().unwrap_or(TrackedPoint {
                x_t: *p,
                a_prev: *p,
                x_back: *p,
                fb_error: f64::INFINITY,
                track_ok: false,
            })
        })
        .collect())
}

/// Runs the stages up to region features for one annotated frame.
pub fn analyze_frame(
    record: &SequenceRecord,
    t: usize,
    cfg: &PipelineConfig,
    sources: &Sources,
) -> Result<FrameAnalysis> {
    let q = select_frame_interval(record, t, cfg.distance_threshold_m)?;
    let prev = t - q;
    let img_t = record.load_frame(t)?;
    let size = img_t.size();
    let gray_t = img_t.to_gray();
    let id = record.poses[t].frame_id;

    let edges = match &sources.edges {
        Source::Compute => detect_edges(&gray_t, &cfg.edges),
        Source::Injected(dir) => {
            let e = read_edges_png(&frame_file(dir, id, "png"))?;
            if e.size() != size {
                return Err(Error::SizeMismatch { expected: size, actual: e.size() });
            }
            e
        }
    };
    let points = select_edge_points(&edges, cfg.tau_e)?;
    let proposals = match &sources.proposals {
        Source::Compute => generate_proposals(&points, size, &cfg.proposals)?,
        Source::Injected(dir) => {
            let p = read_proposals_json(&frame_file(dir, id, "json"))?;
            if let Some(b) = p.iter().find(|b| !b.fits(size.0, size.1)) {
                return Err(Error::invalid(format!("injected proposal {} exceeds the image", b.id)));
            }
            p
        }
    };

    let pixels: Vec<PixelPoint> = points.points.iter().map(|p| PixelPoint::new(p.x as f64, p.y as f64)).collect();
    let tracks = match &sources.flow {
        FlowSource::Tracker => {
            let gray_prev = record.load_frame(prev)?.to_gray();
            LucasKanade::new(&gray_t, &gray_prev, cfg.flow)?.correspondences(&pixels)?
        }
        FlowSource::Injected(dir) => injected_flow(&frame_file(dir, id, "csv"), &pixels)?,
        FlowSource::Custom(f) => f(t, prev, &pixels)?,
    };
    if tracks.len() != pixels.len() {
        return Err(Error::CountMismatch(format!(
            "{} correspondences for {} edge points",
            tracks.len(),
            pixels.len()
        )));
    }

    let (pose_t, pose_prev) = pair_poses(record, t, prev, cfg);
    let h = ground_homography(&pose_t, &pose_prev, &record.ground()?, &record.intrinsics)?;
    let gamma = motion_direction(&pose_t, &pose_prev)?;
    let geo: Vec<GeoPointFeature> = tracks.iter().map(|tp| point_geometry(tp, &h, gamma)).collect();

    let extractor = FeatureExtractor::new(&points, &geo, &img_t.to_hsv())?;
    let features = proposals.par_iter().map(|b| extractor.extract(b)).collect::<Result<Vec<_>>>()?;
    Ok(FrameAnalysis {
        frame: t,
        prev,
        size,
        edges,
        points,
        tracks,
        geo,
        proposals,
        features,
    })
}

/// Annotated frames visited by training and detection.
pub fn frames_to_process(record: &SequenceRecord, stride: usize) -> Vec<usize> {
    record.annotated().into_iter().step_by(stride.max(1)).collect()
}

/// The two trained regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    /// Appearance–geometry regressor, 19 channels.
    pub agr: RegressionForest,
    /// Appearance-only regressor, 17 channels.
    pub ar: RegressionForest,
}

impl Models {
    pub const AGR_FILE: &'static str = "agr.json";
    pub const AR_FILE: &'static str = "ar.json";

    pub fn save(&self, dir: &Path, hash: &str) -> Result<()> {
        for (name, forest) in [(Self::AGR_FILE, &self.agr), (Self::AR_FILE, &self.ar)] {
            let tagged = RegressionForest {
                config_hash: Some(hash.to_string()),
                ..forest.clone()
            };
            write_json(&dir.join(name), &tagged)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<RegressionForest> {
            let f: RegressionForest = crate::artifacts::read_json(&dir.join(name))?;
            f.validate()?;
            Ok(f)
        };
        let models = Self {
            agr: read(Self::AGR_FILE)?,
            ar: read(Self::AR_FILE)?,
        };
        if models.agr.dimensionality != crate::features::FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: crate::features::FEATURE_DIM,
                actual: models.agr.dimensionality,
            });
        }
        if models.ar.dimensionality != crate::features::APPEARANCE_DIM {
            return Err(Error::DimensionMismatch {
                expected: crate::features::APPEARANCE_DIM,
                actual: models.ar.dimensionality,
            });
        }
        Ok(models)
    }
}

/// Feature rows of the floor-class proposals of one frame.
pub fn training_rows(analysis: &FrameAnalysis, labels: &LabelImage) -> Result<Vec<FeatureRow>> {
    if labels.size() != analysis.size {
        return Err(Error::SizeMismatch { expected: analysis.size, actual: labels.size() });
    }
    let targets = label_samples(&analysis.proposals, labels)?;
    Ok(analysis
        .proposals
        .iter()
        .zip(&analysis.features)
        .zip(targets)
        .filter(|(_, l)| l.class == SampleClass::Floor)
        .map(|((b, f), l)| FeatureRow {
            id: format!("{}:{}", analysis.frame, b.id),
            features: f.vector,
            lambda: f.lambda_region,
            n_points: f.n_points,
            label_iou: l.label_iou,
            class: l.class,
        })
        .collect())
}

/// Pooled floor-class samples of every annotated frame. Frames without enough
/// motion are skipped with a warning.
pub fn collect_training_rows(
    records: &[SequenceRecord],
    cfg: &PipelineConfig,
    sources: &Sources,
) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (s, record) in records.iter().enumerate() {
        let per_frame: Vec<Result<Vec<FeatureRow>>> = frames_to_process(record, cfg.frame_stride)
            .into_par_iter()
            .map(|t| {
                let a = match analyze_frame(record, t, cfg, sources) {
                    Err(Error::InsufficientMotion { .. }) => return Ok(Vec::new()),
                    other => other?,
                };
                let labels = record.load_labels(t)?.expect("annotated frame");
                training_rows(&a, &labels)
            })
            .collect();
        for r in per_frame {
            rows.extend(r?.into_iter().map(|mut row| {
                row.id = format!("{s}:{}", row.id);
                row
            }));
        }
    }
    Ok(rows)
}

/// Trains AGR on all 19 channels and AR on the appearance channels.
pub fn train_models(rows: &[FeatureRow], cfg: &PipelineConfig) -> Result<Models> {
    let mut full = Dataset::default();
    let mut appearance = Dataset::default();
    for r in rows {
        full.push(r.features.as_slice().to_vec(), r.label_iou);
        appearance.push(r.features.appearance().to_vec(), r.label_iou);
    }
    let agr_params = crate::model::ForestParams { seed: cfg.seed, ..cfg.forest.clone() };
    let ar_params = crate::model::ForestParams { seed: cfg.seed.wrapping_add(1), ..cfg.forest.clone() };
    Ok(Models {
        agr: RegressionForest::train(&full, &agr_params)?,
        ar: RegressionForest::train(&appearance, &ar_params)?,
    })
}

pub fn train(records: &[SequenceRecord], cfg: &PipelineConfig, sources: &Sources) -> Result<(Models, Vec<FeatureRow>)> {
    cfg.validate()?;
    let rows = collect_training_rows(records, cfg, sources)?;
    log::info!("training on {} floor-class proposals", rows.len());
    Ok((train_models(&rows, cfg)?, rows))
}

/// Score of every proposal under the configured scoring mode.
pub fn score_proposals(analysis: &FrameAnalysis, models: &Models, cfg: &PipelineConfig) -> Result<Vec<ScoredProposal>> {
    analysis
        .proposals
        .iter()
        .zip(&analysis.features)
        .map(|(b, f)| {
            let score = match cfg.scoring {
                ScoringMode::Fused => {
                    agfm_predict(&models.agr, &models.ar, &f.vector, f.lambda_region, cfg.tau_gc, cfg.gating)?
                }
                ScoringMode::AppearanceOnly => models.ar.predict(f.vector.appearance())?,
                ScoringMode::GeometryOnly => models.agr.predict(f.vector.as_slice())?,
            };
            Ok(ScoredProposal { proposal: *b, score })
        })
        .collect()
}

pub fn probability_map(scored: &[ScoredProposal], size: (u32, u32), cfg: &PipelineConfig) -> Result<ProbabilityMap> {
    match cfg.map_scheme {
        MapScheme::WeightDecay => build_map(scored, cfg.tau_b, size),
        MapScheme::NmsTopHalf => build_map_nms(scored, cfg.nms_iou, size),
    }
}

/// Detection output of one frame.
pub struct FrameResult {
    pub frame: usize,
    pub prev: usize,
    pub map: ProbabilityMap,
    pub mask: Option<SegmentationMask>,
}

/// One parallax record per edge point, for the intermediate dump.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParallaxRow {
    pub x: u32,
    pub y: u32,
    pub ax: f64,
    pub ay: f64,
    pub phi: f64,
    pub theta: f64,
    pub lambda: f64,
}

/// Writes the edge map, proposals, parallax points and map of one frame.
pub fn dump_intermediates(
    dir: &Path,
    frame_id: u64,
    analysis: &FrameAnalysis,
    map: &ProbabilityMap,
    hash: &str,
) -> Result<()> {
    write_edges_png(&frame_file(&dir.join("edges"), frame_id, "png"), &analysis.edges, Some(hash))?;
    write_proposals_json(&frame_file(&dir.join("proposals"), frame_id, "json"), &analysis.proposals)?;
    let path = frame_file(&dir.join("parallax"), frame_id, "csv");
    std::fs::create_dir_all(path.parent().expect("frame file has a parent"))?;
    let mut w = crate::artifacts::csv_writer(&path, hash)?;
    for ((p, tp), g) in analysis.points.points.iter().zip(&analysis.tracks).zip(&analysis.geo) {
        w.serialize(ParallaxRow {
            x: p.x,
            y: p.y,
            ax: tp.a_prev.u,
            ay: tp.a_prev.v,
            phi: g.phi,
            theta: g.theta,
            lambda: g.lambda,
        })?;
    }
    w.flush()?;
    write_map_png(&frame_file(&dir.join("maps"), frame_id, "png"), map, Some(hash))
}

/// Sidecar describing how a map PNG was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub tau_b: usize,
    pub normalizer: f64,
    pub threshold: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub threshold: Option<f64>,
    /// Writes maps, masks and sidecars here.
    pub output: Option<PathBuf>,
    pub dump_intermediates: bool,
}

/// Detection on every processed frame. Frame-level failures are logged and
/// returned alongside the successful results.
pub fn detect(
    record: &SequenceRecord,
    models: &Models,
    cfg: &PipelineConfig,
    sources: &Sources,
    opts: &DetectOptions,
) -> Result<(Vec<FrameResult>, Vec<(usize, Error)>)> {
    cfg.validate()?;
    if let Some(t) = opts.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
    }
    let hash = cfg.hash();
    let frames = frames_to_process(record, cfg.frame_stride);
    let outcomes: Vec<(usize, Result<FrameResult>)> = frames
        .par_iter()
        .map(|&t| (t, detect_frame(record, t, models, cfg, sources, opts, &hash)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in outcomes {
        match r {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("frame {t} skipped: {e}");
                failures.push((t, e));
            }
        }
    }
    Ok((results, failures))
}

fn detect_frame(
    record: &SequenceRecord,
    t: usize,
    models: &Models,
    cfg: &PipelineConfig,
    sources: &Sources,
    opts: &DetectOptions,
    hash: &str,
) -> Result<FrameResult> {
    let analysis = analyze_frame(record, t, cfg, sources)?;
    let scored = score_proposals(&analysis, models, cfg)?;
    let map = probability_map(&scored, analysis.size, cfg)?;
    let mask = opts.threshold.map(|thr| segment(&map, thr)).transpose()?;
    if let Some(dir) = &opts.output {
        let id = record.poses[t].frame_id;
        write_map_png(&frame_file(&dir.join("maps"), id, "png"), &map, Some(hash))?;
        let normalizer = match cfg.map_scheme {
            MapScheme::WeightDecay => crate::probmap::harmonic(cfg.tau_b),
            MapScheme::NmsTopHalf => 1.0,
        };
        write_json(
            &frame_file(&dir.join("maps"), id, "json"),
            &MapSidecar {
                tau_b: cfg.tau_b,
                normalizer,
                threshold: opts.threshold,
                config_hash: hash.to_string(),
            },
        )?;
        if let Some(m) = &mask {
            write_mask_png(&frame_file(&dir.join("masks"), id, "png"), m, Some(hash))?;
        }
        if opts.dump_intermediates {
            dump_intermediates(&dir.join("intermediates"), id, &analysis, &map, hash)?;
        }
    }
    Ok(FrameResult {
        frame: t,
        prev: analysis.prev,
        map,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_sequence, WriteOptions};
    use crate::model::ForestParams;
    use crate::synth::{random_scene, SceneCorrespondences, SceneParams, SceneSpec};

    fn small() -> (tempfile::TempDir, SceneSpec, SequenceRecord) {
        let dir = tempfile::tempdir().unwrap();
        let spec = random_scene(
            11,
            &SceneParams {
                width: 160,
                height: 96,
                focal_px: 100.0,
                n_frames: 8,
                ..Default::default()
            },
        );
        let rec = write_sequence(&spec, dir.path(), &WriteOptions::default()).unwrap();
        (dir, spec, rec)
    }

    fn cfg() -> PipelineConfig {
        let mut c = PipelineConfig {
            distance_threshold_m: 0.12,
            forest: ForestParams { n_trees: 4, ..Default::default() },
            ..Default::default()
        };
        c.proposals.scales = vec![16, 32, 64];
        c.proposals.stride = 8;
        c
    }

    #[test]
    fn early_frames_lack_motion() {
        let (_d, _s, rec) = small();
        assert!(matches!(
            analyze_frame(&rec, 2, &cfg(), &Sources::default()),
            Err(Error::InsufficientMotion { .. })
        ));
        let a = analyze_frame(&rec, 7, &cfg(), &Sources::default()).unwrap();
        assert_eq!(a.prev, 4);
        assert_eq!(a.features.len(), a.proposals.len());
        assert_eq!(a.geo.len(), a.points.len());
    }

    #[test]
    fn injected_proposals_match_generated_ones() {
        let (d, _s, rec) = small();
        let c = cfg();
        let a = analyze_frame(&rec, 6, &c, &Sources::default()).unwrap();
        let inj = d.path().join("inj");
        write_proposals_json(&frame_file(&inj, 6, "json"), &a.proposals).unwrap();
        write_edges_png(&frame_file(&inj, 6, "png"), &a.edges, None).unwrap();
        let sources = Sources {
            proposals: Source::Injected(inj.clone()),
            ..Default::default()
        };
        let b = analyze_frame(&rec, 6, &c, &sources).unwrap();
        assert_eq!(a.proposals, b.proposals);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn exact_flow_gives_high_confidence() {
        let (_d, spec, rec) = small();
        let spec = Arc::new(spec);
        let s2 = spec.clone();
        let flow: Arc<FlowFn> = Arc::new(move |t, prev, pts| {
            SceneCorrespondences::new(&s2, s2.pose(t)?, s2.pose(prev)?).correspondences(pts)
        });
        let sources = Sources {
            flow: FlowSource::Custom(flow),
            ..Default::default()
        };
        let a = analyze_frame(&rec, 7, &cfg(), &sources).unwrap();
        assert!(a.features.iter().any(|f| f.lambda_region > 1e3));
    }

    #[test]
    fn train_and_detect_are_deterministic() {
        let (d, _s, rec) = small();
        let c = cfg();
        let recs = vec![rec.clone()];
        let (m1, rows) = train(&recs, &c, &Sources::default()).unwrap();
        let (m2, _) = train(&recs, &c, &Sources::default()).unwrap();
        assert_eq!(m1, m2);
        assert!(!rows.is_empty());
        let out = d.path().join("out");
        let opts = DetectOptions {
            threshold: Some(0.5),
            output: Some(out.clone()),
            dump_intermediates: true,
        };
        let (res, fails) = detect(&rec, &m1, &c, &Sources::default(), &opts).unwrap();
        assert_eq!(res.len() + fails.len(), rec.annotated().len());
        assert!(fails.iter().all(|(_, e)| matches!(e, Error::InsufficientMotion { .. })));
        let t = res[0].frame as u64;
        for sub in ["maps", "masks", "intermediates/edges", "intermediates/parallax", "intermediates/maps"] {
            let ext = if sub.ends_with("parallax") { "csv" } else { "png" };
            assert!(frame_file(&out.join(sub), t, ext).exists(), "{sub}");
        }
        assert!(frame_file(&out.join("intermediates/proposals"), t, "json").exists());
        let models_dir = d.path().join("models");
        m1.save(&models_dir, &c.hash()).unwrap();
        let loaded = Models::load(&models_dir).unwrap();
        assert_eq!(loaded.agr.config_hash.as_deref(), Some(c.hash().as_str()));
        let (again, _) = detect(&rec, &loaded, &c, &Sources::default(), &DetectOptions::default()).unwrap();
        assert_eq!(res[0].map, again[0].map);
    }
}
