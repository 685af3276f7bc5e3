//! Pipeline configuration and its reproducibility hash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, sha256_hex};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::model::{ForestParams, GatingRule};
use crate::proposals::{EdgeParams, ProposalParams};
use crate::synth::PoseNoise;

/// How scored proposals become a probability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapScheme {
    #[default]
    WeightDecay,
    /// Greedy NMS, best half of the survivors, per-pixel maximum.
    NmsTopHalf,
}

/// Which regressors score the proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Confidence-gated fusion of both models.
    #[default]
    Fused,
    AppearanceOnly,
    GeometryOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fraction of edge points kept.
    pub tau_e: f64,
    /// Confidence threshold of the model gate.
    pub tau_gc: f64,
    /// Number of top proposals accumulated into the map.
    pub tau_b: usize,
    /// Minimum camera displacement between the two frames of a pair.
    pub distance_threshold_m: f64,
    pub gating: GatingRule,
    pub scoring: ScoringMode,
    pub map_scheme: MapScheme,
    pub nms_iou: f64,
    pub edges: EdgeParams,
    pub proposals: ProposalParams,
    pub flow: FlowParams,
    pub forest: ForestParams,
    /// Master seed; forests and noise draws derive from it.
    pub seed: u64,
    pub roc_thresholds: usize,
    pub fpr_target: f64,
    /// Process every `frame_stride`-th annotated frame.
    pub frame_stride: usize,
    /// Odometry noise applied to the current pose of every pair.
    pub pose_noise: PoseNoise,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_e: 0.8,
            tau_gc: 0.1,
            tau_b: 50,
            distance_threshold_m: 0.20,
            gating: GatingRule::default(),
            scoring: ScoringMode::default(),
            map_scheme: MapScheme::default(),
            nms_iou: 0.5,
            edges: EdgeParams::default(),
            proposals: ProposalParams::default(),
            flow: FlowParams::default(),
            forest: ForestParams::default(),
            seed: 0,
            roc_thresholds: 1001,
            fpr_target: 0.02,
            frame_stride: 1,
            pose_noise: PoseNoise::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_e > 0.0 && self.tau_e <= 1.0) {
            return Err(Error::invalid("tau_e must lie in (0, 1]"));
        }
        if !(self.tau_gc >= 0.0) || !self.tau_gc.is_finite() {
            return Err(Error::invalid("tau_gc must be non-negative"));
        }
        if self.tau_b == 0 {
            return Err(Error::invalid("tau_b must be at least 1"));
        }
        if !(self.distance_threshold_m >= 0.0) {
            return Err(Error::invalid("distance threshold must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fpr_target) {
            return Err(Error::invalid("FPR target must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::invalid("NMS IoU must lie in [0, 1]"));
        }
        if self.roc_thresholds < crate::eval::MIN_THRESHOLDS {
            return Err(Error::invalid("at least 256 ROC thresholds are required"));
        }
        if self.frame_stride == 0 {
            return Err(Error::invalid("frame_stride must be at least 1"));
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return Err(Error::invalid("forest needs trees and min_leaf ≥ 1"));
        }
        self.proposals.validate()?;
        self.flow.validate()
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
