//! Python bindings: camera and floor types, the geometric primitives, map
//! accumulation and the synth/train/detect/evaluate pipeline over directories.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use groundparallax::config::PipelineConfig;
use groundparallax::dataset::{load_sequence, write_sequence, WriteOptions};
use groundparallax::eval::{roc, summarize};
use groundparallax::geometry::{
    self, CameraIntrinsics, Extrinsics, GroundPlane, PixelPoint, PlanarPose,
};
use groundparallax::pipeline::{self, DetectOptions, Models, Sources};
use groundparallax::probmap::{self, ScoredProposal};
use groundparallax::proposals::Proposal;
use groundparallax::synth::{random_scene, SceneParams};
use groundparallax::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyIOError::new_err(e.to_string())
    }
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

fn pose(p: (f64, f64, f64)) -> PlanarPose {
    PlanarPose::new(p.0, p.1, p.2)
}

/// Pinhole intrinsics in pixels.
#[pyclass(name = "Intrinsics", frozen)]
struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> PyResult<Self> {
        CameraIntrinsics::new(fx, fy, cx, cy, width, height).map(Self).map_err(py_err)
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        rows(&self.0.matrix())
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        self.0.size()
    }

    fn __repr__(&self) -> String {
        format!("Intrinsics(fx={}, fy={}, cx={}, cy={}, size={:?})", self.0.fx, self.0.fy, self.0.cx, self.0.cy, self.0.size())
    }
}

/// Camera mounting on the robot plus the floor it drives on.
#[pyclass(name = "Rig", frozen)]
struct PyRig {
    extrinsics: Extrinsics,
    ground: GroundPlane,
}

#[pymethods]
impl PyRig {
    /// Forward-looking camera `height` metres above a horizontal floor,
    /// pitched down by `pitch` radians.
    #[staticmethod]
    fn forward_pitched(height: f64, pitch: f64) -> PyResult<Self> {
        Ok(Self {
            extrinsics: Extrinsics::forward_pitched(height, pitch),
            ground: GroundPlane::horizontal(height).map_err(py_err)?,
        })
    }

    /// Floor homography mapping pixels of `current` onto `previous`.
    fn ground_homography(
        &self,
        k: &PyIntrinsics,
        current: (f64, f64, f64),
        previous: (f64, f64, f64),
    ) -> PyResult<PyHomography> {
        let pt = self.extrinsics.camera_pose(&pose(current));
        let pp = self.extrinsics.camera_pose(&pose(previous));
        geometry::ground_homography(&pt, &pp, &self.ground, &k.0)
            .map(PyHomography)
            .map_err(py_err)
    }

    /// Epipole of the current camera centre in the previous frame, or `None`
    /// when it lies at infinity.
    fn epipole(&self, k: &PyIntrinsics, current: (f64, f64, f64), previous: (f64, f64, f64)) -> PyResult<Option<(f64, f64)>> {
        let pt = self.extrinsics.camera_pose(&pose(current));
        let pp = self.extrinsics.camera_pose(&pose(previous));
        let e = geometry::epipole_prev(&pt, &pp, &k.0).map_err(py_err)?;
        Ok(e.point().map(|p| (p.u, p.v)))
    }

    /// Projects a world point into the camera at `at`.
    fn project(&self, k: &PyIntrinsics, at: (f64, f64, f64), point: (f64, f64, f64)) -> Option<(f64, f64)> {
        let p = self.extrinsics.camera_pose(&pose(at));
        k.0.project(&p, &Vector3::new(point.0, point.1, point.2)).map(|q| (q.u, q.v))
    }
}

#[pyclass(name = "Homography", frozen)]
struct PyHomography(geometry::Homography);

#[pymethods]
impl PyHomography {
    fn matrix(&self) -> [[f64; 3]; 3] {
        rows(self.0.matrix())
    }

    fn transfer(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        self.0.transfer(PixelPoint::new(u, v)).map(|p| (p.u, p.v))
    }
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

/// Floor normal (first camera frame), height and per-pair transfer residuals
/// from marked floor correspondences.
#[pyfunction]
fn calibrate_ground(
    pairs: Vec<((f64, f64), (f64, f64))>,
    k: &PyIntrinsics,
    height: f64,
) -> PyResult<([f64; 3], f64, Vec<f64>)> {
    let pairs: Vec<(PixelPoint, PixelPoint)> = pairs
        .into_iter()
        .map(|(a, b)| (PixelPoint::new(a.0, a.1), PixelPoint::new(b.0, b.1)))
        .collect();
    let r = geometry::calibrate_ground(&pairs, &k.0, height).map_err(py_err)?;
    Ok(([r.normal.x, r.normal.y, r.normal.z], r.height_m, r.per_pair_residual_px))
}

/// `(rho, collinearity residual)` of an appearance correspondence `a` against
/// its floor transfer `g` and the epipole `e`.
#[pyfunction]
fn parallax(a: (f64, f64), g: (f64, f64), e: (f64, f64)) -> PyResult<(f64, f64)> {
    let p = geometry::ground_pixel_parallax(
        PixelPoint::new(a.0, a.1),
        PixelPoint::new(g.0, g.1),
        PixelPoint::new(e.0, e.1),
    )
    .map_err(py_err)?;
    Ok((p.rho, p.collinearity_residual))
}

/// Weight-decayed map from `(u, v, w, h, score)` boxes, row-major.
#[pyfunction]
#[pyo3(signature = (boxes, width, height, tau_b = 50))]
fn build_map(boxes: Vec<(u32, u32, u32, u32, f64)>, width: u32, height: u32, tau_b: usize) -> PyResult<Vec<f64>> {
    let scored: Vec<ScoredProposal> = boxes
        .into_iter()
        .enumerate()
        .map(|(id, (u, v, w, h, score))| ScoredProposal {
            proposal: Proposal { id, u, v, w, h, objectness: 0.0 },
            score,
        })
        .collect();
    let map = probmap::build_map(&scored, tau_b, (width, height)).map_err(py_err)?;
    Ok(map.values().to_vec())
}

/// The default pipeline configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&PipelineConfig::default()).expect("config serializes")
}

/// Renders a random benchmark scene into `out`; returns the frame count.
#[pyfunction]
#[pyo3(signature = (seed, out, scene_params = None, blur = 0))]
fn synth(seed: u64, out: PathBuf, scene_params: Option<&str>, blur: u32) -> PyResult<usize> {
    let params: SceneParams = match scene_params {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SceneParams::default(),
    };
    let spec = random_scene(seed, &params);
    let rec = write_sequence(&spec, &out, &WriteOptions { blur_kernel: blur, blur_seed: seed, hash: None })
        .map_err(py_err)?;
    Ok(rec.len())
}

/// Trains both regressors on the sequences and saves them to `out`; returns
/// the number of training rows.
#[pyfunction]
#[pyo3(signature = (sequences, out, config = None))]
fn train(py: Python<'_>, sequences: Vec<PathBuf>, out: PathBuf, config: Option<&str>) -> PyResult<usize> {
    let cfg = self::config(config)?;
    py.detach(|| {
        let records = sequences.iter().map(|p| load_sequence(p)).collect::<Result<Vec<_>, _>>()?;
        let (models, rows) = pipeline::train(&records, &cfg, &Sources::default())?;
        models.save(&out, &cfg.hash())?;
        Ok::<_, Error>(rows.len())
    })
    .map_err(py_err)
}

/// Runs detection and writes maps (and masks with a threshold) under `out`;
/// returns the processed frame ids.
#[pyfunction]
#[pyo3(signature = (sequence, models, out, config = None, threshold = None))]
fn detect(
    py: Python<'_>,
    sequence: PathBuf,
    models: PathBuf,
    out: PathBuf,
    config: Option<&str>,
    threshold: Option<f64>,
) -> PyResult<Vec<u64>> {
    let cfg = self::config(config)?;
    py.detach(|| {
        let record = load_sequence(&sequence)?;
        let models = Models::load(&models)?;
        let opts = DetectOptions { threshold, output: Some(out), dump_intermediates: false };
        let (results, _) = pipeline::detect(&record, &models, &cfg, &Sources::default(), &opts)?;
        Ok::<_, Error>(results.iter().map(|r| record.poses[r.frame].frame_id).collect())
    })
    .map_err(py_err)
}

/// ITPR, MIFP, TPR and FPR of saved predictions, at `threshold` or at the
/// configured FPR operating point.
#[pyfunction]
#[pyo3(signature = (sequences, predictions, config = None, threshold = None))]
fn evaluate<'py>(
    py: Python<'py>,
    sequences: Vec<PathBuf>,
    predictions: Vec<PathBuf>,
    config: Option<&str>,
    threshold: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = self::config(config)?;
    let (summary, n) = py
        .detach(|| {
            let (maps, labels) = groundparallax::cli::load_predictions(&sequences, &predictions)?;
            let t = match threshold {
                Some(t) => t,
                None => roc(&maps, &labels, cfg.roc_thresholds)?.operating_point(cfg.fpr_target).threshold,
            };
            Ok::<_, Error>((summarize(&maps, &labels, t)?, maps.len()))
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("itpr", summary.itpr)?;
    d.set_item("mifp", summary.mifp)?;
    d.set_item("tpr", summary.tpr)?;
    d.set_item("fpr", summary.fpr)?;
    d.set_item("threshold", summary.threshold)?;
    d.set_item("n_frames", n)?;
    Ok(d)
}

/// Runs the command-line interface with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    groundparallax::cli::run(std::iter::once("groundparallax".to_string()).chain(args))
}

#[pymodule]
fn groundparallax_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyRig>()?;
    m.add_class::<PyHomography>()?;
    m.add_function(wrap_pyfunction!(calibrate_ground, m)?)?;
    m.add_function(wrap_pyfunction!(parallax, m)?)?;
    m.add_function(wrap_pyfunction!(build_map, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
