//! WIDER-style evaluation: greedy matching, precision/recall sweeps and
//! average precision on the Easy, Medium and Hard subsets.
//!
//! Subsets are cumulative: Medium contains the Easy boxes and Hard contains
//! all three. Boxes outside the active subset behave like `ignore` boxes: a
//! detection landing on one is neither a true nor a false positive.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::BBox;
use crate::postprocess::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Ignore,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Ignore => "ignore",
        }
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "ignore" => Ok(Difficulty::Ignore),
            other => Err(format!("unknown difficulty tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Easy,
    Medium,
    Hard,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Easy, Subset::Medium, Subset::Hard];

    pub fn contains(self, tag: Difficulty) -> bool {
        match (self, tag) {
            (_, Difficulty::Ignore) => false,
            (Subset::Easy, t) => t == Difficulty::Easy,
            (Subset::Medium, t) => t != Difficulty::Hard,
            (Subset::Hard, _) => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Easy => "easy",
            Subset::Medium => "medium",
            Subset::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthImage {
    pub image_id: String,
    pub boxes: Vec<BBox>,
    pub tags: Vec<Difficulty>,
}

impl GroundTruthImage {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BBox>, tags: Vec<Difficulty>) -> Result<Self> {
        if boxes.len() != tags.len() {
            return Err(Error::LengthMismatch {
                what: "boxes vs difficulty tags",
                left: boxes.len(),
                right: tags.len(),
            });
        }
        Ok(GroundTruthImage {
            image_id: image_id.into(),
            boxes,
            tags,
        })
    }

    pub fn count_in(&self, subset: Subset) -> usize {
        self.tags.iter().filter(|t| subset.contains(**t)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    Skipped,
}

/// Order in which detections are matched: score descending, area
/// descending, input position.
pub fn match_order(dets: &[Detection]) -> Vec<usize> {
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

/// Flags aligned with `dets`.
pub fn match_image(dets: &[Detection], gt: &GroundTruthImage, subset: Subset, match_iou: f64) -> Vec<MatchFlag> {
    let mut flags = vec![MatchFlag::FalsePositive; dets.len()];
    let mut taken = vec![false; gt.boxes.len()];
    for i in match_order(dets) {
        let d = &dets[i].bbox;
        let mut tp: Option<(usize, f64)> = None;
        let mut best: Option<(usize, f64)> = None;
        for (g, gb) in gt.boxes.iter().enumerate() {
            let v = d.iou(gb);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
            if v >= match_iou && !taken[g] && subset.contains(gt.tags[g]) && tp.is_none_or(|(_, b)| v > b) {
                tp = Some((g, v));
            }
        }
        flags[i] = match (tp, best) {
            (Some((g, _)), _) => {
                taken[g] = true;
                MatchFlag::TruePositive
            }
            (None, Some((g, v))) if v >= match_iou && !subset.contains(gt.tags[g]) => MatchFlag::Skipped,
            _ => MatchFlag::FalsePositive,
        };
    }
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<PrPoint>,
    pub ap: f64,
    pub n_gt: usize,
}

impl PrCurve {
    pub fn empty(n_gt: usize) -> Self {
        PrCurve {
            points: Vec::new(),
            ap: 0.0,
            n_gt,
        }
    }
}

/// Sweep every distinct score and integrate the precision envelope over
/// recall (all-point interpolation). Skipped detections are ignored.
pub fn pr_curve(scored: &[(f64, MatchFlag)], n_gt: usize) -> Result<PrCurve> {
    if n_gt == 0 {
        return Err(Error::arg("n_gt", "at least one ground-truth box is required"));
    }
    let mut ranked: Vec<(f64, bool)> = scored
        .iter()
        .filter(|(_, f)| *f != MatchFlag::Skipped)
        .map(|(s, f)| (*s, *f == MatchFlag::TruePositive))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let mut tps = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < ranked.len() {
        let threshold = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == threshold {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tps.push(tp);
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / n_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    // Recall steps are integrated in true-positive counts and divided once,
    // so a perfect ranking gives exactly 1.
    let mut area = 0.0;
    let mut envelope = 0.0f64;
    let mut upper = tps.last().copied().unwrap_or(0);
    for (p, &t) in points.iter().zip(&tps).rev() {
        if t < upper {
            area += (upper - t) as f64 * envelope;
            upper = t;
        }
        envelope = envelope.max(p.precision);
    }
    area += upper as f64 * envelope;
    Ok(PrCurve {
        points,
        ap: (area / n_gt as f64).clamp(0.0, 1.0),
        n_gt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub easy: PrCurve,
    pub medium: PrCurve,
    pub hard: PrCurve,
    pub n_images: usize,
}

impl EvalReport {
    pub fn curve(&self, subset: Subset) -> &PrCurve {
        match subset {
            Subset::Easy => &self.easy,
            Subset::Medium => &self.medium,
            Subset::Hard => &self.hard,
        }
    }

    /// `{"easy": ap, "medium": ap, "hard": ap, "n_images": k}`
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "easy": self.easy.ap,
            "medium": self.medium.ap,
            "hard": self.hard.ap,
            "n_images": self.n_images,
        })
    }
}

pub fn evaluate(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &[GroundTruthImage],
    match_iou: f64,
) -> Result<EvalReport> {
    evaluate_with(Execution::default(), dets, gts, match_iou)
}

pub fn evaluate_with(
    exec: Execution,
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &[GroundTruthImage],
    match_iou: f64,
) -> Result<EvalReport> {
    if !(match_iou > 0.0 && match_iou < 1.0) {
        return Err(Error::arg("match_iou", format!("must lie in (0, 1), got {match_iou}")));
    }
    let known: BTreeSet<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
    let unknown: Vec<String> = dets.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownImages(unknown));
    }

    let mut curves = Vec::with_capacity(3);
    for subset in Subset::ALL {
        let per_image = exec::map(exec, gts, |gt| {
            let ds = dets.get(&gt.image_id).map(Vec::as_slice).unwrap_or(&[]);
            let flags = match_image(ds, gt, subset, match_iou);
            ds.iter().map(|d| d.score).zip(flags).collect::<Vec<_>>()
        });
        let scored: Vec<(f64, MatchFlag)> = per_image.into_iter().flatten().collect();
        let n_gt: usize = gts.iter().map(|g| g.count_in(subset)).sum();
        curves.push(if n_gt == 0 {
            PrCurve::empty(0)
        } else {
            pr_curve(&scored, n_gt)?
        });
    }
    let hard = curves.pop().expect("three subsets");
    let medium = curves.pop().expect("three subsets");
    let easy = curves.pop().expect("three subsets");
    Ok(EvalReport {
        easy,
        medium,
        hard,
        n_images: gts.len(),
    })
}
