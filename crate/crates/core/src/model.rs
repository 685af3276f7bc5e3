//! Training labels, random-forest IoU regressors and the confidence-gated
//! fusion of the appearance–geometry and appearance-only models.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, APPEARANCE_DIM, FEATURE_DIM};
use crate::image::{LabelImage, FIRST_INSTANCE, LABEL_FLOOR};
use crate::proposals::Proposal;

/// Share of floor-or-obstacle pixels above which a proposal counts as floor.
pub const FLOOR_SHARE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleClass {
    Floor,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalLabel {
    pub class: SampleClass,
    /// IoU of the box with the union of obstacle instances it touches.
    pub label_iou: f64,
}

/// Per-pixel counting tables for labeling many boxes against one annotation.
pub struct LabelIndex {
    width: u32,
    height: u32,
    occupied: Vec<u32>,
    instances: Vec<(u16, u64, Vec<u32>)>,
}

fn integral(width: u32, height: u32, f: impl Fn(usize) -> bool) -> Vec<u32> {
    let (w, h) = (width as usize, height as usize);
    let s = w + 1;
    let mut t = vec![0u32; s * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += f(y * w + x) as u32;
            t[(y + 1) * s + x + 1] = t[y * s + x + 1] + row;
        }
    }
    t
}

impl LabelIndex {
    pub fn new(labels: &LabelImage) -> Self {
        let (w, h) = labels.size();
        let data = labels.data();
        let occupied = integral(w, h, |i| data[i] == LABEL_FLOOR || data[i] >= FIRST_INSTANCE);
        let instances = labels
            .instance_ids()
            .into_iter()
            .map(|id| {
                let area = data.iter().filter(|l| **l == id).count() as u64;
                (id, area, integral(w, h, |i| data[i] == id))
            })
            .collect();
        Self {
            width: w,
            height: h,
            occupied,
            instances,
        }
    }

    fn sum(&self, t: &[u32], b: &Proposal) -> u64 {
        let s = self.width as usize + 1;
        let (x0, y0) = (b.u as usize, b.v as usize);
        let (x1, y1) = (x0 + b.w as usize, y0 + b.h as usize);
        (t[y1 * s + x1] as i64 + t[y0 * s + x0] as i64 - t[y0 * s + x1] as i64 - t[y1 * s + x0] as i64)
            as u64
    }

    pub fn label(&self, b: &Proposal) -> Result<ProposalLabel> {
        if !b.fits(self.width, self.height) {
            return Err(Error::MaskMismatch(format!("proposal {} exceeds the label image", b.id)));
        }
        let area = b.area();
        let occupied = self.sum(&self.occupied, b);
        let class = if occupied as f64 / area as f64 > FLOOR_SHARE {
            SampleClass::Floor
        } else {
            SampleClass::Background
        };
        let mut inter = 0u64;
        let mut touched = 0u64;
        for (_, inst_area, t) in &self.instances {
            let c = self.sum(t, b);
            if c > 0 {
                inter += c;
                touched += inst_area;
            }
        }
        let union = area + touched - inter;
        Ok(ProposalLabel {
            class,
            label_iou: inter as f64 / union as f64,
        })
    }
}

/// Labels every proposal; callers keep only `SampleClass::Floor` rows for training.
pub fn label_samples(proposals: &[Proposal], labels: &LabelImage) -> Result<Vec<ProposalLabel>> {
    let index = LabelIndex::new(labels);
    proposals.iter().map(|b| index.label(b)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Channels examined per split; `None` means `⌈√dim⌉`.
    pub feature_subsample: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: Some(20),
            min_leaf: 5,
            feature_subsample: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

/// Flattened binary tree; node 0 is the root and a sample goes left when
/// `x[feature] ≤ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                TreeNode::Leaf { value, .. } if !(0.0..=1.0).contains(value) => {
                    return Err(Error::invalid(format!("leaf {i} value {value} outside [0, 1]")))
                }
                TreeNode::Split {
                    feature,
                    left,
                    right,
                    threshold,
                } if *feature >= dim
                    || *left <= i
                    || *right <= i
                    || *left >= self.nodes.len()
                    || *right >= self.nodes.len()
                    || !threshold.is_finite() =>
                {
                    return Err(Error::invalid(format!("malformed split node {i}")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub dimensionality: usize,
    pub seed: u64,
    pub params: ForestParams,
    /// Hash of the pipeline configuration that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub trees: Vec<Tree>,
}

/// Training rows: feature vectors and IoU labels in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.features.push(x);
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

struct Builder<'a> {
    /// Feature-major copy of the samples.
    cols: Vec<Vec<f64>>,
    y: &'a [f64],
    dim: usize,
    max_depth: usize,
    min_leaf: usize,
    n_features: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    pos: usize,
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        TreeNode::Leaf {
            value: (sum / idx.len() as f64).clamp(0.0, 1.0),
            count: idx.len(),
        }
    }

    /// Best variance-reduction split on one channel, as (gain, threshold, split position).
    fn best_on(&self, idx: &[usize], f: usize, pairs: &mut Vec<(f64, u32)>) -> Option<(f64, f64, usize)> {
        let col = &self.cols[f];
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (col[i], i as u32)));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = pairs.len();
        let total: f64 = pairs.iter().map(|p| self.y[p.1 as usize]).sum();
        let mut left = 0.0;
        let mut best: Option<(f64, f64, usize)> = None;
        for k in 1..n {
            left += self.y[pairs[k - 1].1 as usize];
            let (a, b) = (pairs[k - 1].0, pairs[k].0);
            if k < self.min_leaf || n - k < self.min_leaf || a.total_cmp(&b).is_eq() {
                continue;
            }
            let right = total - left;
            let gain = left * left / k as f64 + right * right / (n - k) as f64;
            if best.is_none_or(|(g, _, _)| gain > g) {
                let mut thr = a + (b - a) / 2.0;
                if thr >= b {
                    thr = a;
                }
                best = Some((gain, thr, k));
            }
        }
        best
    }

    fn find_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<Split> {
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.shuffle(rng);
        let mut pairs = Vec::with_capacity(idx.len());
        let mut best: Option<(f64, Split)> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.n_features && best.is_some() {
                break;
            }
            if let Some((gain, threshold, pos)) = self.best_on(idx, f, &mut pairs) {
                let better = match &best {
                    None => true,
                    Some((g, s)) => gain > *g || (gain == *g && f < s.feature),
                };
                if better {
                    best = Some((
                        gain,
                        Split {
                            feature: f,
                            threshold,
                            pos,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn grow(&self, idx: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes: Vec<TreeNode> = vec![self.leaf(&idx)];
        let mut stack = vec![(0usize, idx, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let first = self.y[idx[0]];
            let constant = idx.iter().all(|&i| self.y[i] == first);
            if constant || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
                continue;
            }
            let Some(split) = self.find_split(&idx, rng) else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.cols[split.feature][i] <= split.threshold);
            debug_assert_eq!(l.len(), split.pos);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(self.leaf(&l));
            nodes.push(self.leaf(&r));
            nodes[slot] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: li,
                right: ri,
            };
            // right first so the left subtree is expanded first
            stack.push((ri, r, depth + 1));
            stack.push((li, l, depth + 1));
        }
        Tree { nodes }
    }
}

impl RegressionForest {
    pub fn train(data: &Dataset, params: &ForestParams) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        if params.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        if data.features.len() != data.labels.len() {
            return Err(Error::CountMismatch("feature rows and labels differ in count".into()));
        }
        if data.len() < params.min_leaf || data.is_empty() {
            return Err(Error::InsufficientData(format!(
                "{} samples for min_leaf {}",
                data.len(),
                params.min_leaf
            )));
        }
        let dim = data.features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature rows are empty"));
        }
        for row in &data.features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("feature values must be finite"));
            }
        }
        if data.labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::invalid("labels must lie in [0, 1]"));
        }

        // canonical sample order makes training independent of input order
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| {
            cmp_rows(&data.features[a], &data.features[b]).then(data.labels[a].total_cmp(&data.labels[b]))
        });
        let x: Vec<Vec<f64>> = order.iter().map(|&i| data.features[i].clone()).collect();
        let y: Vec<f64> = order.iter().map(|&i| data.labels[i]).collect();

        let n_features = params
            .feature_subsample
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim);
        let builder = Builder {
            cols: (0..dim).map(|f| x.iter().map(|row| row[f]).collect()).collect(),
            y: &y,
            dim,
            max_depth: params.max_depth.unwrap_or(usize::MAX),
            min_leaf: params.min_leaf,
            n_features,
        };
        let n = y.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let idx: Vec<usize> = if params.bootstrap {
                    let mut v: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    v.sort_unstable();
                    v
                } else {
                    (0..n).collect()
                };
                builder.grow(idx, &mut rng)
            })
            .collect();
        Ok(Self {
            dimensionality: dim,
            seed: params.seed,
            params: params.clone(),
            config_hash: None,
            trees,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimensionality {
            return Err(Error::DimensionMismatch {
                expected: self.dimensionality,
                actual: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::invalid("forest has no trees"));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.dimensionality))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }
}

/// Which model the region confidence selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingRule {
    /// Geometry when tracking is reliable: `Λ ≥ τ_gc` → AGR, otherwise AR.
    #[default]
    GeometryWhenConfident,
    /// The inverted comparison: `Λ < τ_gc` → AGR, otherwise AR.
    GeometryWhenUnconfident,
}

impl GatingRule {
    pub fn uses_geometry(&self, lambda_region: f64, tau_gc: f64) -> bool {
        match self {
            GatingRule::GeometryWhenConfident => lambda_region >= tau_gc,
            GatingRule::GeometryWhenUnconfident => lambda_region < tau_gc,
        }
    }
}

/// Confidence-gated fusion of the 19-d and 17-d regressors.
pub fn agfm_predict(
    agr: &RegressionForest,
    ar: &RegressionForest,
    fv: &FeatureVector,
    lambda_region: f64,
    tau_gc: f64,
    rule: GatingRule,
) -> Result<f64> {
    if agr.dimensionality != FEATURE_DIM {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: agr.dimensionality,
        });
    }
    if ar.dimensionality != APPEARANCE_DIM {
        return Err(Error::DimensionMismatch {
            expected: APPEARANCE_DIM,
            actual: ar.dimensionality,
        });
    }
    if rule.uses_geometry(lambda_region, tau_gc) {
        agr.predict(fv.as_slice())
    } else {
        ar.predict(fv.appearance())
    }
}
