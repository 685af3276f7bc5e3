//! Pixel-level ROC and instance-level detection rates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelImage, Mask, FIRST_INSTANCE, LABEL_FLOOR};
use crate::probmap::ProbabilityMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub gt_obs: u64,
    pub gt_ground: u64,
}

impl PixelCounts {
    pub fn merge(&self, o: &PixelCounts) -> PixelCounts {
        PixelCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            gt_obs: self.gt_obs + o.gt_obs,
            gt_ground: self.gt_ground + o.gt_ground,
        }
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / self.gt_obs as f64
    }

    pub fn fpr(&self) -> f64 {
        self.fp as f64 / self.gt_ground as f64
    }

    pub fn check(&self) -> Result<()> {
        if self.gt_obs == 0 {
            return Err(Error::EmptyGroundTruth("no obstacle pixels".into()));
        }
        if self.gt_ground == 0 {
            return Err(Error::EmptyGroundTruth("no floor pixels".into()));
        }
        Ok(())
    }
}

fn same_size(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a != b {
        return Err(Error::SizeMismatch {
            expected: b,
            actual: a,
        });
    }
    Ok(())
}

/// Raw counts; pixels that are neither floor nor obstacle are ignored.
pub fn pixel_counts(mask: &Mask, labels: &LabelImage) -> Result<PixelCounts> {
    same_size(mask.size(), labels.size())?;
    let mut c = PixelCounts::default();
    for (m, l) in mask.data().iter().zip(labels.data()) {
        if *l >= FIRST_INSTANCE {
            c.gt_obs += 1;
            c.tp += *m as u64;
        } else if *l == LABEL_FLOOR {
            c.gt_ground += 1;
            c.fp += *m as u64;
        }
    }
    Ok(c)
}

/// Counts of one frame, rejecting frames without obstacle or floor pixels.
pub fn pixel_rates(mask: &Mask, labels: &LabelImage) -> Result<PixelCounts> {
    let c = pixel_counts(mask, labels)?;
    c.check()?;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by increasing threshold.
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Largest FPR not above `target`; among equal FPRs the lowest threshold.
    /// Falls back to the point with the smallest FPR.
    pub fn operating_point(&self, target: f64) -> RocPoint {
        let below = self
            .points
            .iter()
            .filter(|p| p.fpr <= target)
            .max_by(|a, b| a.fpr.total_cmp(&b.fpr).then(b.threshold.total_cmp(&a.threshold)));
        match below {
            Some(p) => *p,
            None => *self
                .points
                .iter()
                .min_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.threshold.total_cmp(&b.threshold)))
                .expect("curve has points"),
        }
    }
}

pub const MIN_THRESHOLDS: usize = 256;

pub fn thresholds(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Index of the largest threshold `≤ p`.
fn threshold_index(p: f64, n: usize) -> usize {
    let t = |i: usize| i as f64 / (n - 1) as f64;
    let mut k = ((p * (n - 1) as f64).floor().max(0.0) as usize).min(n - 1);
    while k + 1 < n && t(k + 1) <= p {
        k += 1;
    }
    while k > 0 && t(k) > p {
        k -= 1;
    }
    k
}

/// Pooled ROC over all frames at `n_thresholds` uniform thresholds in `[0, 1]`.
pub fn roc(maps: &[ProbabilityMap], labels: &[LabelImage], n_thresholds: usize) -> Result<RocCurve> {
    if n_thresholds < MIN_THRESHOLDS {
        return Err(Error::invalid(format!("ROC needs at least {MIN_THRESHOLDS} thresholds")));
    }
    if maps.len() != labels.len() {
        return Err(Error::CountMismatch(format!(
            "{} maps for {} label images",
            maps.len(),
            labels.len()
        )));
    }
    let n = n_thresholds;
    let mut obs_at = vec![0u64; n];
    let mut floor_at = vec![0u64; n];
    let mut total = PixelCounts::default();
    for (m, l) in maps.iter().zip(labels) {
        same_size(m.size(), l.size())?;
        for (p, lab) in m.values().iter().zip(l.data()) {
            if *lab >= FIRST_INSTANCE {
                total.gt_obs += 1;
                obs_at[threshold_index(*p, n)] += 1;
            } else if *lab == LABEL_FLOOR {
                total.gt_ground += 1;
                floor_at[threshold_index(*p, n)] += 1;
            }
        }
    }
    total.check()?;
    // a pixel at index k passes every threshold 0..=k
    let mut points = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0u64, 0u64);
    let ts = thresholds(n);
    for k in (0..n).rev() {
        tp += obs_at[k];
        fp += floor_at[k];
        points.push(RocPoint {
            threshold: ts[k],
            fpr: fp as f64 / total.gt_ground as f64,
            tpr: tp as f64 / total.gt_obs as f64,
        });
    }
    points.reverse();
    Ok(RocCurve { points })
}

/// 8-connected components of a mask as a label grid (0 = off) and the count.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let data = mask.data();
    let mut comp = vec![0u32; data.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if !data[start] || comp[start] != 0 {
            continue;
        }
        next += 1;
        comp[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if data[j] && comp[j] == 0 {
                        comp[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (comp, next)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCounts {
    pub itp: u64,
    pub ifp: u64,
    pub n_obs: u64,
    pub n_img: u64,
}

impl InstanceCounts {
    pub fn merge(&self, o: &InstanceCounts) -> InstanceCounts {
        InstanceCounts {
            itp: self.itp + o.itp,
            ifp: self.ifp + o.ifp,
            n_obs: self.n_obs + o.n_obs,
            n_img: self.n_img + o.n_img,
        }
    }

    pub fn itpr(&self) -> f64 {
        self.itp as f64 / self.n_obs as f64
    }

    pub fn mifp(&self) -> f64 {
        self.ifp as f64 / self.n_img as f64
    }
}

/// Instance counts of one frame: a ground-truth instance is found when more
/// than half of its pixels are predicted, a predicted component is false when
/// more than half of it lies on the floor.
pub fn instance_counts(mask: &Mask, labels: &LabelImage) -> Result<InstanceCounts> {
    same_size(mask.size(), labels.size())?;
    let data = labels.data();
    let ids = labels.instance_ids();
    let mut itp = 0;
    for id in &ids {
        let (mut area, mut hit) = (0u64, 0u64);
        for (l, m) in data.iter().zip(mask.data()) {
            if l == id {
                area += 1;
                hit += *m as u64;
            }
        }
        if 2 * hit > area {
            itp += 1;
        }
    }
    let (comp, n) = connected_components(mask);
    let mut size = vec![0u64; n as usize + 1];
    let mut on_floor = vec![0u64; n as usize + 1];
    for (c, l) in comp.iter().zip(data) {
        if *c > 0 {
            size[*c as usize] += 1;
            on_floor[*c as usize] += (*l == LABEL_FLOOR) as u64;
        }
    }
    let ifp = (1..=n as usize).filter(|&c| 2 * on_floor[c] > size[c]).count() as u64;
    Ok(InstanceCounts {
        itp,
        ifp,
        n_obs: ids.len() as u64,
        n_img: 1,
    })
}

/// As [`instance_counts`], rejecting frames without obstacle instances or floor.
pub fn instance_rates(mask: &Mask, labels: &LabelImage) -> Result<InstanceCounts> {
    pixel_counts(mask, labels)?.check()?;
    instance_counts(mask, labels)
}

/// Summary at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub itpr: f64,
    pub mifp: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub threshold: f64,
}

/// Segments every map at `threshold` and pools pixel and instance counts.
pub fn summarize(maps: &[ProbabilityMap], labels: &[LabelImage], threshold: f64) -> Result<EvalSummary> {
    if maps.len() != labels.len() || maps.is_empty() {
        return Err(Error::CountMismatch("maps and labels must pair up and be non-empty".into()));
    }
    let mut px = PixelCounts::default();
    let mut inst = InstanceCounts::default();
    for (m, l) in maps.iter().zip(labels) {
        let mask = crate::probmap::segment(m, threshold)?;
        px = px.merge(&pixel_counts(&mask, l)?);
        inst = inst.merge(&instance_counts(&mask, l)?);
    }
    px.check()?;
    Ok(EvalSummary {
        itpr: inst.itpr(),
        mifp: inst.mifp(),
        tpr: px.tpr(),
        fpr: px.fpr(),
        threshold,
    })
}
