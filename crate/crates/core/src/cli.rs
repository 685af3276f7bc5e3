//! Command-line driver. Exit codes: 0 success, 1 usage or validation error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::artifacts::{frame_file, read_json, read_map_png, write_feature_csv, write_json, write_roc_csv};
use crate::config::PipelineConfig;
use crate::dataset::{load_sequence, write_ground, write_sequence, SequenceRecord, WriteOptions};
use crate::error::{Error, Result};
use crate::eval::{roc, summarize, EvalSummary, RocCurve};
use crate::geometry::{calibrate_ground, CameraIntrinsics, Extrinsics, GroundPlane, PixelPoint, PlanarPose};
use crate::image::LabelImage;
use crate::pipeline::{detect, train, DetectOptions, FlowSource, Models, Source, Sources};
use crate::probmap::ProbabilityMap;
use crate::synth::{random_scene, SceneParams, SceneSpec};

#[derive(Debug, Parser)]
#[command(name = "groundparallax", version, about = "Obstacle discovery on reflective floors")]
pub struct Cli {
    /// Pipeline configuration JSON; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the FPR of the operating point.
    #[arg(long, global = true)]
    pub fpr_target: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the floor plane from marked correspondences between two poses.
    Calibrate(CalibrateArgs),
    /// Render a synthetic sequence.
    Synth(SynthArgs),
    /// Train both regressors on annotated sequences.
    Train(TrainArgs),
    /// Produce probability maps (and masks) for a sequence.
    Detect(DetectArgs),
    /// Instance and pixel metrics at one operating point.
    Eval(EvalArgs),
    /// Pooled pixel ROC curve.
    Roc(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// JSON list of `{"first": [u, v], "second": [u, v]}` floor correspondences.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Measured camera height above the floor, metres.
    #[arg(long)]
    pub height: f64,
    /// Odometer-to-camera extrinsics; with it the normal is written in odometer
    /// coordinates, otherwise in the first camera's frame.
    #[arg(long)]
    pub extrinsics: Option<PathBuf>,
    /// Output `ground.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional calibration report with per-pair residuals.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description JSON.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub spec: Option<PathBuf>,
    /// Generate a random benchmark scene from this seed instead.
    #[arg(long)]
    pub random: Option<u64>,
    /// Generator knobs for `--random`.
    #[arg(long, requires = "random")]
    pub scene_params: Option<PathBuf>,
    /// Odd motion-blur kernel length applied to every frame.
    #[arg(long, default_value_t = 0)]
    pub blur: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct InjectArgs {
    /// Directory of edge maps keyed by frame id.
    #[arg(long)]
    pub inject_edges: Option<PathBuf>,
    /// Directory of proposal lists keyed by frame id.
    #[arg(long)]
    pub inject_proposals: Option<PathBuf>,
    /// Directory of correspondence CSVs keyed by frame id.
    #[arg(long)]
    pub inject_flow: Option<PathBuf>,
}

impl InjectArgs {
    fn sources(&self) -> Sources {
        let src = |p: &Option<PathBuf>| p.clone().map_or(Source::Compute, Source::Injected);
        Sources {
            edges: src(&self.inject_edges),
            proposals: src(&self.inject_proposals),
            flow: self.inject_flow.clone().map_or(FlowSource::Tracker, FlowSource::Injected),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "sequence", required = true)]
    pub sequences: Vec<PathBuf>,
    /// Receives `features.csv`, `agr.json` and `ar.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inject: InjectArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub sequence: PathBuf,
    /// Directory holding `agr.json` and `ar.json`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write binary masks at this threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write edge maps, proposals, parallax points and maps per frame.
    #[arg(long)]
    pub dump_intermediates: bool,
    #[command(flatten)]
    pub inject: InjectArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Annotated sequence; repeat together with `--predictions`.
    #[arg(long = "sequence", required = true)]
    pub sequences: Vec<PathBuf>,
    /// Output directory of `detect` for the matching sequence.
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<PathBuf>,
    /// Fixed segmentation threshold; by default the FPR operating point.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct PairRecord {
    first: [f64; 2],
    second: [f64; 2],
}

#[derive(Debug, Serialize)]
struct EvalReport {
    #[serde(flatten)]
    summary: EvalSummary,
    n_frames: usize,
    config_hash: String,
}

#[derive(Debug, Serialize)]
struct DetectReport {
    processed: Vec<u64>,
    skipped: Vec<SkippedFrame>,
    config_hash: String,
}

#[derive(Debug, Serialize)]
struct SkippedFrame {
    frame_id: u64,
    reason: String,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.fpr_target {
        cfg.fpr_target = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let hash = cfg.hash();
    match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Synth(a) => synth(a, &cfg, &hash),
        Command::Train(a) => {
            let records = a.sequences.iter().map(|p| load_sequence(p)).collect::<Result<Vec<_>>>()?;
            let (models, rows) = train(&records, &cfg, &a.inject.sources())?;
            write_feature_csv(&a.out.join("features.csv"), &rows, &hash)?;
            models.save(&a.out, &hash)
        }
        Command::Detect(a) => {
            let record = load_sequence(&a.sequence)?;
            let models = Models::load(&a.models)?;
            let opts = DetectOptions {
                threshold: a.threshold,
                output: Some(a.out.clone()),
                dump_intermediates: a.dump_intermediates,
            };
            let (results, failures) = detect(&record, &models, &cfg, &a.inject.sources(), &opts)?;
            let id = |t: usize| record.poses[t].frame_id;
            write_json(
                &a.out.join("detect.json"),
                &DetectReport {
                    processed: results.iter().map(|r| id(r.frame)).collect(),
                    skipped: failures
                        .iter()
                        .map(|(t, e)| SkippedFrame {
                            frame_id: id(*t),
                            reason: e.to_string(),
                        })
                        .collect(),
                    config_hash: hash.clone(),
                },
            )
        }
        Command::Eval(a) => {
            let (maps, labels) = load_predictions(&a.sequences, &a.predictions)?;
            let threshold = match a.threshold {
                Some(t) => t,
                None => roc(&maps, &labels, cfg.roc_thresholds)?.operating_point(cfg.fpr_target).threshold,
            };
            let summary = summarize(&maps, &labels, threshold)?;
            write_json(
                &a.out,
                &EvalReport {
                    summary,
                    n_frames: maps.len(),
                    config_hash: hash,
                },
            )
        }
        Command::Roc(a) => {
            let (maps, labels) = load_predictions(&a.sequences, &a.predictions)?;
            let curve: RocCurve = roc(&maps, &labels, cfg.roc_thresholds)?;
            write_roc_csv(&a.out, &curve, &hash)
        }
    }
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let pairs: Vec<PairRecord> = read_json(&a.pairs)?;
    let k: CameraIntrinsics = read_json(&a.intrinsics)?;
    k.validate()?;
    let pairs: Vec<(PixelPoint, PixelPoint)> = pairs
        .iter()
        .map(|p| {
            (
                PixelPoint::new(p.first[0], p.first[1]),
                PixelPoint::new(p.second[0], p.second[1]),
            )
        })
        .collect();
    let report = calibrate_ground(&pairs, &k, a.height)?;
    let ground = match &a.extrinsics {
        Some(p) => {
            let ext: Extrinsics = crate::dataset::read_extrinsics(p)?;
            let pose = ext.camera_pose(&PlanarPose::new(0.0, 0.0, 0.0));
            GroundPlane::from_camera_frame(report.normal, report.height_m, &pose)?
        }
        None => report.ground(),
    };
    write_ground(&a.out, &ground)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

fn synth(a: &SynthArgs, cfg: &PipelineConfig, hash: &str) -> Result<()> {
    let spec: SceneSpec = match (&a.spec, a.random) {
        (Some(p), _) => read_json(p)?,
        (None, Some(seed)) => {
            let params: SceneParams = match &a.scene_params {
                Some(p) => read_json(p)?,
                None => SceneParams::default(),
            };
            random_scene(seed, &params)
        }
        (None, None) => return Err(Error::invalid("either --spec or --random is required")),
    };
    write_sequence(
        &spec,
        &a.out,
        &WriteOptions {
            blur_kernel: a.blur,
            blur_seed: cfg.seed,
            hash: Some(hash.to_string()),
        },
    )?;
    write_json(&a.out.join("scene.json"), &spec)
}

/// Maps written by `detect` for every annotated frame, with their labels.
pub fn load_predictions(
    sequences: &[PathBuf],
    predictions: &[PathBuf],
) -> Result<(Vec<ProbabilityMap>, Vec<LabelImage>)> {
    if sequences.len() != predictions.len() {
        return Err(Error::CountMismatch(format!(
            "{} sequences but {} prediction directories",
            sequences.len(),
            predictions.len()
        )));
    }
    let mut maps = Vec::new();
    let mut labels = Vec::new();
    for (seq, pred) in sequences.iter().zip(predictions) {
        let record: SequenceRecord = load_sequence(seq)?;
        for t in record.annotated() {
            let path = frame_file(&pred.join("maps"), record.poses[t].frame_id, "png");
            if !path.is_file() {
                continue;
            }
            let map = read_map_png(&path)?;
            let l = record.load_labels(t)?.expect("annotated frame");
            if map.size() != l.size() {
                return Err(Error::SizeMismatch {
                    expected: l.size(),
                    actual: map.size(),
                });
            }
            maps.push(map);
            labels.push(l);
        }
    }
    if maps.is_empty() {
        return Err(Error::InsufficientData("no predicted maps for annotated frames".into()));
    }
    Ok((maps, labels))
}
