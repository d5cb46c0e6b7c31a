//! Detection fusion: greedy NMS, score-weighted box voting, and merging of
//! detections from several test scales.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::arg("score", format!("must lie in [0, 1], got {score}")));
        }
        Ok(Detection { bbox, score })
    }
}

/// Score descending, then area descending, then input position.
fn rank(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| dets[b].bbox.area().total_cmp(&dets[a].bbox.area()))
            .then_with(|| a.cmp(&b))
    });
    order
}

pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.bbox.area().total_cmp(&a.bbox.area()))
    });
}

fn check_threshold(name: &'static str, t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(name, format!("IoU threshold must lie in (0, 1), got {t}")))
    }
}

/// Greedy non-maximum suppression.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    check_threshold("iou_thresh", iou_thresh)?;
    let mut kept: Vec<Detection> = Vec::new();
    for i in rank(dets) {
        let d = dets[i];
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) < iou_thresh) {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// Indices of the clusters formed by [`bbox_vote`], in emission order. Each
/// cluster starts with its seed.
pub fn vote_clusters(dets: &[Detection], vote_iou: f64) -> Result<Vec<Vec<usize>>> {
    check_threshold("vote_iou", vote_iou)?;
    let mut remaining = rank(dets);
    let mut clusters = Vec::new();
    while let Some(&seed) = remaining.first() {
        let seed_box = dets[seed].bbox;
        let (members, rest): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&j| j == seed || dets[j].bbox.iou(&seed_box) >= vote_iou);
        clusters.push(members);
        remaining = rest;
    }
    Ok(clusters)
}

/// Replace each cluster around the best remaining detection with the
/// score-weighted mean of its members' corners, carrying the cluster's
/// maximum score.
pub fn bbox_vote(dets: &[Detection], vote_iou: f64) -> Result<Vec<Detection>> {
    let clusters = vote_clusters(dets, vote_iou)?;
    let mut out = Vec::with_capacity(clusters.len());
    for members in clusters {
        out.push(fuse(members.iter().map(|&i| &dets[i]))?);
    }
    sort_by_score(&mut out);
    Ok(out)
}

fn fuse<'a>(members: impl Iterator<Item = &'a Detection> + Clone) -> Result<Detection> {
    let max_score = members.clone().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = members.clone().map(|d| d.score).sum();
    if total <= 0.0 {
        // All-zero scores: fall back to the plain mean.
        let n = members.clone().count() as f64;
        let mut c = [0.0; 4];
        for d in members {
            for (acc, v) in c.iter_mut().zip(d.bbox.corners()) {
                *acc += v / n;
            }
        }
        return Detection::new(BBox::try_from(c)?, max_score);
    }
    let mut c = [0.0; 4];
    for d in members {
        let w = d.score / total;
        for (acc, v) in c.iter_mut().zip(d.bbox.corners()) {
            *acc += w * v;
        }
    }
    Detection::new(BBox::try_from(c)?, max_score)
}

/// Detections produced at one test scale, in that scale's pixel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRun {
    pub scale_factor: f64,
    pub flipped: bool,
    pub detections: Vec<Detection>,
}

impl ScaleRun {
    /// Map this run's boxes back to the original image frame.
    pub fn to_original(&self, original_size: (f64, f64)) -> Result<Vec<Detection>> {
        let f = self.scale_factor;
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::arg("scale_factor", format!("must be positive, got {f}")));
        }
        let scaled_w = original_size.0 * f;
        self.detections
            .iter()
            .map(|d| {
                let b = if self.flipped { d.bbox.flipped(scaled_w)? } else { d.bbox };
                Ok(Detection {
                    bbox: b.scaled(1.0 / f)?,
                    score: d.score,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    pub vote_iou: f64,
    pub pre_nms_iou: f64,
    /// `None` keeps every detection.
    pub max_dets: Option<usize>,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            vote_iou: 0.5,
            pre_nms_iou: 0.3,
            max_dets: Some(750),
        }
    }
}

/// Multi-scale fusion: each run is mapped to the original frame and
/// suppressed on its own at `pre_nms_iou`; the survivors of all runs are then
/// voted together at `vote_iou` and truncated to `max_dets`.
pub fn merge_scales(runs: &[ScaleRun], original_size: (f64, f64), params: &MergeParams) -> Result<Vec<Detection>> {
    if runs.is_empty() {
        return Err(Error::arg("runs", "at least one scale run is required"));
    }
    check_threshold("pre_nms_iou", params.pre_nms_iou)?;
    check_threshold("vote_iou", params.vote_iou)?;
    let mut pooled = Vec::new();
    for run in runs {
        pooled.extend(nms(&run.to_original(original_size)?, params.pre_nms_iou)?);
    }
    // Canonical pool order so the result does not depend on run order.
    pooled.sort_by(cmp_canonical);
    let mut out = bbox_vote(&pooled, params.vote_iou)?;
    if let Some(max) = params.max_dets {
        out.truncate(max);
    }
    Ok(out)
}

fn cmp_canonical(a: &Detection, b: &Detection) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| {
        a.bbox
            .corners()
            .iter()
            .zip(b.bbox.corners())
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    })
}
