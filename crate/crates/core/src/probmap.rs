//! Weight-decayed obstacle probability map and threshold segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::proposals::Proposal;

pub type SegmentationMask = Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    pub proposal: Proposal,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    p: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, p: Vec<f64>) -> Result<Self> {
        if p.len() != width as usize * height as usize {
            return Err(Error::invalid("probability map length does not match its size"));
        }
        if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        Ok(Self { width, height, p })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            p: vec![0.0; width as usize * height as usize],
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

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.p[y as usize * self.width as usize + x as usize]
    }
}

/// `Σ_{k=1}^{n} 1/k`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Highest scores first, ties by lower proposal id.
pub fn rank_order(scored: &[ScoredProposal]) -> Vec<ScoredProposal> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.proposal.id.cmp(&b.proposal.id)));
    v
}

fn check_inputs(scored: &[ScoredProposal], size: (u32, u32)) -> Result<()> {
    for s in scored {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::invalid(format!("score {} outside [0, 1]", s.score)));
        }
        if s.proposal.u + s.proposal.w > size.0 || s.proposal.v + s.proposal.h > size.1 {
            return Err(Error::invalid(format!("proposal {} outside the map", s.proposal.id)));
        }
    }
    Ok(())
}

/// Accumulates the `tau_b` best boxes; each pixel weighs its covering boxes by
/// the reciprocal of their rank among them and the sum is divided by `H_{tau_b}`.
pub fn build_map(scored: &[ScoredProposal], tau_b: usize, size: (u32, u32)) -> Result<ProbabilityMap> {
    if tau_b == 0 {
        return Err(Error::invalid("tau_b must be at least 1"));
    }
    check_inputs(scored, size)?;
    let (w, h) = (size.0 as usize, size.1 as usize);
    let mut acc = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for s in rank_order(scored).iter().take(tau_b) {
        let b = &s.proposal;
        for y in b.v as usize..(b.v + b.h) as usize {
            for x in b.u as usize..(b.u + b.w) as usize {
                let i = y * w + x;
                count[i] += 1;
                acc[i] += s.score / count[i] as f64;
            }
        }
    }
    let norm = harmonic(tau_b);
    let p = acc.into_iter().map(|a| (a / norm).min(1.0)).collect();
    Ok(ProbabilityMap {
        width: size.0,
        height: size.1,
        p,
    })
}

fn iou(a: &Proposal, b: &Proposal) -> f64 {
    let x0 = a.u.max(b.u);
    let y0 = a.v.max(b.v);
    let x1 = (a.u + a.w).min(b.u + b.w);
    let y1 = (a.v + a.h).min(b.v + b.h);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

/// Baseline scheme without weight decay: greedy NMS at `nms_iou`, keep the
/// better half of the survivors, and give each pixel the highest score of the
/// boxes covering it.
pub fn build_map_nms(scored: &[ScoredProposal], nms_iou: f64, size: (u32, u32)) -> Result<ProbabilityMap> {
    check_inputs(scored, size)?;
    let mut kept: Vec<ScoredProposal> = Vec::new();
    for s in rank_order(scored) {
        if kept.iter().all(|k| iou(&k.proposal, &s.proposal) <= nms_iou) {
            kept.push(s);
        }
    }
    kept.truncate(kept.len().div_ceil(2));
    let w = size.0 as usize;
    let mut p = vec![0.0f64; w * size.1 as usize];
    for s in &kept {
        let b = &s.proposal;
        for y in b.v as usize..(b.v + b.h) as usize {
            for x in b.u as usize..(b.u + b.w) as usize {
                let i = y * w + x;
                p[i] = p[i].max(s.score);
            }
        }
    }
    Ok(ProbabilityMap {
        width: size.0,
        height: size.1,
        p,
    })
}

/// Pixels with `P ≥ threshold`.
pub fn segment(map: &ProbabilityMap, threshold: f64) -> Result<SegmentationMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    Mask::new(map.width, map.height, map.p.iter().map(|v| *v >= threshold).collect())
}
