//! Detection losses with analytic first derivatives.
//!
//! * focal loss `-a_t (1 - p_t)^g ln(p_t)` on a binary probability,
//! * IoU loss `-ln(I / U)` on a predicted box,
//! * the two-step classification and regression sums built from them,
//! * max-out selection over several face / background score channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub mod gradcheck;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    /// Weight of the positive class; `None` weights both classes by 1.
    pub alpha: Option<f64>,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: Some(0.25),
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let fp = FocalParams {
            alpha: Some(alpha),
            gamma,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn unweighted(gamma: f64) -> Result<Self> {
        let fp = FocalParams { alpha: None, gamma };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::arg("alpha", format!("must lie in (0, 1), got {a}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::arg("gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Class balance weight for a sample with label `positive`.
    pub fn alpha_t(&self, positive: bool) -> f64 {
        match (self.alpha, positive) {
            (None, _) => 1.0,
            (Some(a), true) => a,
            (Some(a), false) => 1.0 - a,
        }
    }
}

/// A probability for the face class and its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSample {
    pub p: f64,
    pub positive: bool,
}

impl ClassSample {
    pub fn new(p: f64, positive: bool) -> Result<Self> {
        if !p.is_finite() {
            return Err(Error::arg("p", format!("probability must be finite, got {p}")));
        }
        Ok(ClassSample { p, positive })
    }

    /// Build from a `+1` / `-1` label.
    pub fn with_label(p: f64, y: i8) -> Result<Self> {
        match y {
            1 => ClassSample::new(p, true),
            -1 => ClassSample::new(p, false),
            _ => Err(Error::arg("y", format!("label must be +1 or -1, got {y}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxOutConfig {
    pub c_p: usize,
    pub c_n: usize,
}

impl Default for MaxOutConfig {
    fn default() -> Self {
        MaxOutConfig { c_p: 3, c_n: 3 }
    }
}

impl MaxOutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_p == 0 || self.c_n == 0 {
            return Err(Error::arg("maxout", "c_p and c_n must both be >= 1"));
        }
        Ok(())
    }

    /// [`maxout_select`] with the channel counts checked against this config.
    pub fn select(&self, face: &[f64], background: &[f64]) -> Result<(f64, f64)> {
        if face.len() != self.c_p {
            return Err(Error::LengthMismatch {
                what: "face channels vs c_p",
                left: face.len(),
                right: self.c_p,
            });
        }
        if background.len() != self.c_n {
            return Err(Error::LengthMismatch {
                what: "background channels vs c_n",
                left: background.len(),
                right: self.c_n,
            });
        }
        maxout_select(face, background)
    }
}

/// A loss value together with its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossResult<G> {
    pub value: f64,
    pub gradient: G,
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal loss and its derivative with respect to `p`.
///
/// The derivative is zero where `p` was clamped.
pub fn focal_loss(s: ClassSample, fp: FocalParams) -> Result<LossResult<f64>> {
    if !s.p.is_finite() {
        return Err(Error::arg("p", format!("probability must be finite, got {}", s.p)));
    }
    fp.validate()?;
    let p = clamp_prob(s.p);
    let pt = if s.positive { p } else { 1.0 - p };
    let at = fp.alpha_t(s.positive);
    let g = fp.gamma;
    let q = 1.0 - pt;
    let ln_pt = pt.ln();
    let value = -at * q.powf(g) * ln_pt;

    // d/dp_t of -a (1-p_t)^g ln p_t
    let d_pt = if g == 0.0 {
        -at / pt
    } else {
        at * (g * q.powf(g - 1.0) * ln_pt - q.powf(g) / pt)
    };
    let clamped = p != s.p;
    let gradient = match (clamped, s.positive) {
        (true, _) => 0.0,
        (false, true) => d_pt,
        (false, false) => -d_pt,
    };
    Ok(LossResult { value, gradient })
}

/// `-ln IoU(pred, gt)` and its gradient with respect to the predicted corners
/// `(x1, y1, x2, y2)`.
///
/// Where a predicted edge coincides with a ground-truth edge the derivative is
/// taken as if the predicted edge bounds the intersection.
pub fn iou_loss(pred: &BBox, gt: &BBox) -> Result<LossResult<[f64; 4]>> {
    let [x1, y1, x2, y2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = gt.corners();
    let iw = x2.min(gx2) - x1.max(gx1);
    let ih = y2.min(gy2) - y1.max(gy1);
    if iw <= 0.0 || ih <= 0.0 {
        return Err(Error::DisjointBoxes);
    }
    let inter = iw * ih;
    let (pw, ph) = (x2 - x1, y2 - y1);
    let union = pw * ph + gt.area() - inter;
    let value = if pred == gt { 0.0 } else { -(inter / union).ln() };

    let d_inter = [
        if x1 >= gx1 { -ih } else { 0.0 },
        if y1 >= gy1 { -iw } else { 0.0 },
        if x2 <= gx2 { ih } else { 0.0 },
        if y2 <= gy2 { iw } else { 0.0 },
    ];
    let d_area = [-ph, -pw, ph, pw];
    let mut gradient = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        gradient[k] = -d_inter[k] / inter + d_union / union;
    }
    Ok(LossResult {
        value: value.max(0.0),
        gradient,
    })
}

/// Per-group maxima of the face and background channels.
pub fn maxout_select(face: &[f64], background: &[f64]) -> Result<(f64, f64)> {
    let max = |xs: &[f64], what: &'static str| -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::arg(what, "at least one channel is required"));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(what, "scores must be finite"));
        }
        Ok(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    Ok((max(face, "face")?, max(background, "background")?))
}

/// Face probability after max-out: the selected face score normalised
/// against the selected background score.
pub fn maxout_probability(face: f64, background: f64) -> f64 {
    let total = face + background;
    if total > 0.0 {
        face / total
    } else {
        0.5
    }
}

/// Order-independent pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

fn normalized(values: &[f64], n_pos: usize) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / n_pos.max(1) as f64
    }
}

/// Two-step classification loss: each step's focal-loss sum divided by that
/// step's positive count (at least 1).
pub fn stc_loss(
    step1: &[ClassSample],
    step2: &[ClassSample],
    n_pos1: usize,
    n_pos2: usize,
    fp: FocalParams,
) -> Result<f64> {
    let terms = |xs: &[ClassSample]| -> Result<Vec<f64>> {
        xs.iter().map(|s| focal_loss(*s, fp).map(|r| r.value)).collect()
    };
    Ok(normalized(&terms(step1)?, n_pos1) + normalized(&terms(step2)?, n_pos2))
}

/// One regression sample: predicted box, its ground truth, and whether the
/// anchor is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSample {
    pub pred: BBox,
    pub gt: BBox,
    pub positive: bool,
}

/// Two-step regression loss. Only positive samples contribute.
pub fn str_loss(
    step1: &[RegressionSample],
    step2: &[RegressionSample],
    n_pos1: usize,
    n_pos2: usize,
) -> Result<f64> {
    let terms = |xs: &[RegressionSample]| -> Result<Vec<f64>> {
        xs.iter()
            .filter(|s| s.positive)
            .map(|s| iou_loss(&s.pred, &s.gt).map(|r| r.value))
            .collect()
    };
    Ok(normalized(&terms(step1)?, n_pos1) + normalized(&terms(step2)?, n_pos2))
}
