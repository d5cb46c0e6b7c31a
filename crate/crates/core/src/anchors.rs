//! Anchor pyramid generation and IoU-threshold assignment.
//!
//! The default pyramid has six levels P2..P7 with strides 4..128 and two
//! anchors per location of geometric-mean side `2S` and `2*sqrt(2)*S`, all
//! with height/width ratio 1.25. The three lowest levels run two-step
//! classification and the three highest run two-step regression.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::BBox;

/// Minimum side enforced on refined boxes.
pub const MIN_REFINED_SIDE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidLevel {
    pub name: String,
    pub stride: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    pub levels: Vec<PyramidLevel>,
    pub scale_multipliers: Vec<f64>,
    /// Anchor height / width.
    pub aspect_ratio: f64,
    /// `(width, height)` of the network input in pixels.
    pub input_size: (u32, u32),
}

impl Default for PyramidConfig {
    fn default() -> Self {
        let levels = (2..=7)
            .map(|p| PyramidLevel {
                name: format!("P{p}"),
                stride: 1 << p,
            })
            .collect();
        PyramidConfig {
            levels,
            scale_multipliers: vec![2.0, 2.0 * std::f64::consts::SQRT_2],
            aspect_ratio: 1.25,
            input_size: (1024, 1024),
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPyramid(m));
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        for (i, level) in self.levels.iter().enumerate() {
            if !level.stride.is_power_of_two() {
                return bad(format!("stride {} of {} is not a power of two", level.stride, level.name));
            }
            if i > 0 && level.stride <= self.levels[i - 1].stride {
                return bad("strides must be strictly increasing".into());
            }
        }
        if self.scale_multipliers.is_empty() {
            return bad("scale_multipliers must not be empty".into());
        }
        if self.scale_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return bad("scale_multipliers must be positive and finite".into());
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return bad(format!("aspect_ratio must be positive, got {}", self.aspect_ratio));
        }
        let max_stride = self.levels.last().map(|l| l.stride).unwrap_or(1);
        let (w, h) = self.input_size;
        if w < max_stride || h < max_stride {
            return bad(format!("input size {w}x{h} is smaller than the largest stride {max_stride}"));
        }
        Ok(())
    }

    /// Anchors per grid location.
    pub fn anchors_per_location(&self) -> usize {
        self.scale_multipliers.len()
    }

    /// Every anchor side length in the pyramid, ascending.
    pub fn anchor_scales(&self) -> Vec<f64> {
        let mut scales: Vec<f64> = self
            .levels
            .iter()
            .flat_map(|l| self.scale_multipliers.iter().map(move |m| m * l.stride as f64))
            .collect();
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        scales
    }
}

/// Which two-step branch a level belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelRole {
    /// Two-step classification: easy negatives are filtered before step two.
    Classification,
    /// Two-step regression: anchors are refined before step two.
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid {
    pub name: String,
    pub stride: u32,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Global index of the first anchor of this level.
    pub offset: usize,
    pub role: LevelRole,
}

impl LevelGrid {
    pub fn len(&self, per_location: usize) -> usize {
        self.grid_w * self.grid_h * per_location
    }
}

/// The full anchor pyramid with a flat global index.
///
/// Anchors are ordered level by level, then row, column, and multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLattice {
    levels: Vec<LevelGrid>,
    anchors: Vec<BBox>,
    level_of: Vec<u8>,
    per_location: usize,
}

pub fn build_lattice(cfg: &PyramidConfig) -> Result<AnchorLattice> {
    cfg.validate()?;
    let a = cfg.anchors_per_location();
    let (w, h) = cfg.input_size;
    let sqrt_r = cfg.aspect_ratio.sqrt();
    let split = cfg.levels.len() / 2;

    let mut levels = Vec::with_capacity(cfg.levels.len());
    let mut anchors = Vec::new();
    let mut level_of = Vec::new();
    for (li, level) in cfg.levels.iter().enumerate() {
        let s = level.stride as f64;
        let grid_w = w.div_ceil(level.stride) as usize;
        let grid_h = h.div_ceil(level.stride) as usize;
        let offset = anchors.len();
        for j in 0..grid_h {
            let cy = (j as f64 + 0.5) * s;
            for i in 0..grid_w {
                let cx = (i as f64 + 0.5) * s;
                for m in &cfg.scale_multipliers {
                    let side = m * s;
                    anchors.push(BBox::from_center(cx, cy, side / sqrt_r, side * sqrt_r)?);
                    level_of.push(li as u8);
                }
            }
        }
        levels.push(LevelGrid {
            name: level.name.clone(),
            stride: level.stride,
            grid_w,
            grid_h,
            offset,
            role: if li < split {
                LevelRole::Classification
            } else {
                LevelRole::Regression
            },
        });
    }
    Ok(AnchorLattice {
        levels,
        anchors,
        level_of,
        per_location: a,
    })
}

impl AnchorLattice {
    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    pub fn levels(&self) -> &[LevelGrid] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors_per_location(&self) -> usize {
        self.per_location
    }

    pub fn level_index(&self, anchor: usize) -> usize {
        self.level_of[anchor] as usize
    }

    pub fn level_of(&self, anchor: usize) -> &LevelGrid {
        &self.levels[self.level_of[anchor] as usize]
    }

    pub fn stride_of(&self, anchor: usize) -> f64 {
        self.level_of(anchor).stride as f64
    }

    pub fn role_of(&self, anchor: usize) -> LevelRole {
        self.level_of(anchor).role
    }

    /// Per-anchor stride, aligned with [`Self::anchors`].
    pub fn strides(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.stride_of(i)).collect()
    }

    /// Write one line per anchor: `level index x1 y1 x2 y2` with four decimals.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, b) in self.anchors.iter().enumerate() {
            writeln!(
                out,
                "{} {} {:.4} {:.4} {:.4} {:.4}",
                self.level_of(i).name,
                i,
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2()
            )?;
        }
        Ok(())
    }
}

/// IoU thresholds for one assignment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepThresholds {
    pub theta_n: f64,
    pub theta_p: f64,
}

impl StepThresholds {
    pub const FIRST_STEP: StepThresholds = StepThresholds {
        theta_n: 0.3,
        theta_p: 0.7,
    };
    pub const SECOND_STEP: StepThresholds = StepThresholds {
        theta_n: 0.4,
        theta_p: 0.5,
    };

    pub fn new(theta_n: f64, theta_p: f64) -> Result<Self> {
        let t = StepThresholds { theta_n, theta_p };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta_n) {
            return Err(Error::arg("theta_n", format!("must lie in [0, 1), got {}", self.theta_n)));
        }
        if self.theta_p.is_nan() || self.theta_p > 1.0 {
            return Err(Error::arg("theta_p", format!("must not exceed 1, got {}", self.theta_p)));
        }
        if self.theta_n >= self.theta_p {
            return Err(Error::arg("theta_n", "theta_n < theta_p violated"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive(usize),
    Negative,
    Ignored,
}

impl Label {
    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Positive(_))
    }

    pub fn gt_index(&self) -> Option<usize> {
        match self {
            Label::Positive(g) => Some(*g),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Positive(_) => "pos",
            Label::Negative => "neg",
            Label::Ignored => "ign",
        }
    }
}

/// Best ground-truth match of one anchor: `(gt index, IoU)`. `None` when
/// there are no ground-truth boxes.
pub type BestMatch = Option<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<Label>,
    pub best: Vec<BestMatch>,
}

impl Assignment {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Negative).count()
    }

    pub fn num_ignored(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Ignored).count()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Highest-IoU ground truth for `anchor`, ties to the lowest index.
pub fn best_match(anchor: &BBox, gts: &[BBox]) -> BestMatch {
    let mut best: BestMatch = None;
    for (g, gt) in gts.iter().enumerate() {
        let v = anchor.iou(gt);
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((g, v)),
        }
    }
    best
}

fn label_for(best: BestMatch, th: StepThresholds) -> Label {
    match best {
        Some((g, v)) if v >= th.theta_p => Label::Positive(g),
        Some((_, v)) if v >= th.theta_n => Label::Ignored,
        _ => Label::Negative,
    }
}

pub fn assign(anchors: &[BBox], gts: &[BBox], th: StepThresholds) -> Assignment {
    assign_with(Execution::default(), anchors, gts, th)
}

pub fn assign_with(exec: Execution, anchors: &[BBox], gts: &[BBox], th: StepThresholds) -> Assignment {
    let best = exec::map(exec, anchors, |a| best_match(a, gts));
    let labels = best.iter().map(|b| label_for(*b, th)).collect();
    Assignment { labels, best }
}

/// Move each anchor's corners by `delta * stride`.
///
/// Sides that collapse below one pixel are reset to one pixel around their
/// midpoint.
pub fn refine_anchors(anchors: &[BBox], strides: &[f64], deltas: &[[f64; 4]]) -> Result<Vec<BBox>> {
    if anchors.len() != deltas.len() {
        return Err(Error::LengthMismatch {
            what: "anchors vs deltas",
            left: anchors.len(),
            right: deltas.len(),
        });
    }
    if anchors.len() != strides.len() {
        return Err(Error::LengthMismatch {
            what: "anchors vs strides",
            left: anchors.len(),
            right: strides.len(),
        });
    }
    anchors
        .iter()
        .zip(strides)
        .zip(deltas)
        .map(|((a, &s), d)| refine_one(a, s, d))
        .collect()
}

pub fn refine_one(anchor: &BBox, stride: f64, delta: &[f64; 4]) -> Result<BBox> {
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::arg("deltas", format!("non-finite delta {delta:?}")));
    }
    let c = anchor.corners();
    let mut x1 = c[0] + delta[0] * stride;
    let mut y1 = c[1] + delta[1] * stride;
    let mut x2 = c[2] + delta[2] * stride;
    let mut y2 = c[3] + delta[3] * stride;
    if x2 - x1 < MIN_REFINED_SIDE {
        let m = 0.5 * (x1 + x2);
        x1 = m - 0.5 * MIN_REFINED_SIDE;
        x2 = m + 0.5 * MIN_REFINED_SIDE;
    }
    if y2 - y1 < MIN_REFINED_SIDE {
        let m = 0.5 * (y1 + y2);
        y1 = m - 0.5 * MIN_REFINED_SIDE;
        y2 = m + 0.5 * MIN_REFINED_SIDE;
    }
    BBox::new(x1, y1, x2, y2)
}

/// Deltas that move `anchor` exactly onto `target` under [`refine_one`].
pub fn encode_deltas(anchor: &BBox, target: &BBox, stride: f64) -> [f64; 4] {
    let a = anchor.corners();
    let t = target.corners();
    [
        (t[0] - a[0]) / stride,
        (t[1] - a[1]) / stride,
        (t[2] - a[2]) / stride,
        (t[3] - a[3]) / stride,
    ]
}

/// Step one on the original anchors, step two on the refined ones.
pub fn two_step_assign(
    lattice: &AnchorLattice,
    gts: &[BBox],
    refined: &[BBox],
    th1: StepThresholds,
    th2: StepThresholds,
) -> Result<(Assignment, Assignment)> {
    if refined.len() != lattice.len() {
        return Err(Error::LengthMismatch {
            what: "lattice vs refined anchors",
            left: lattice.len(),
            right: refined.len(),
        });
    }
    Ok((assign(lattice.anchors(), gts, th1), assign(refined, gts, th2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn default_pyramid_scales() {
        let lattice = build_lattice(&PyramidConfig::default()).unwrap();
        let p2 = &lattice.levels()[0];
        assert_eq!((p2.grid_w, p2.grid_h, p2.stride), (256, 256, 4));
        assert_eq!(p2.len(2), 131_072);
        let s0 = lattice.anchors()[0].side();
        let s1 = lattice.anchors()[1].side();
        assert!((s0 - 8.0).abs() < 1e-12);
        assert!((s1 - 11.313708).abs() < 1e-6);
        let top = lattice.levels().last().unwrap();
        let last = lattice.anchors()[lattice.len() - 1];
        assert_eq!(top.stride, 128);
        assert!((last.side() - 362.038672).abs() < 1e-6);
        assert!((last.height() / last.width() - 1.25).abs() < 1e-12);
        let (cx, cy) = lattice.anchors()[0].center();
        assert!((cx - 2.0).abs() < 1e-12 && (cy - 2.0).abs() < 1e-12);
    }

    #[test]
    fn roles_split_low_and_high_levels() {
        let lattice = build_lattice(&PyramidConfig::default()).unwrap();
        let roles: Vec<_> = lattice.levels().iter().map(|l| l.role).collect();
        assert_eq!(&roles[..3], &[LevelRole::Classification; 3]);
        assert_eq!(&roles[3..], &[LevelRole::Regression; 3]);
    }

    #[test]
    fn rejects_bad_pyramids() {
        let mut cfg = PyramidConfig {
            input_size: (64, 64),
            ..Default::default()
        };
        assert!(build_lattice(&cfg).is_err());
        cfg.input_size = (128, 128);
        assert!(build_lattice(&cfg).is_ok());
        cfg.levels[1].stride = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = PyramidConfig::default();
        cfg.levels.swap(0, 1);
        assert!(cfg.validate().is_err());
        let cfg = PyramidConfig {
            scale_multipliers: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_square_input_uses_ceil() {
        let cfg = PyramidConfig {
            input_size: (300, 130),
            ..Default::default()
        };
        let lattice = build_lattice(&cfg).unwrap();
        let p2 = &lattice.levels()[0];
        assert_eq!((p2.grid_w, p2.grid_h), (75, 33));
        let p7 = lattice.levels().last().unwrap();
        assert_eq!((p7.grid_w, p7.grid_h), (3, 2));
        let total: usize = lattice.levels().iter().map(|l| l.len(2)).sum();
        assert_eq!(total, lattice.len());
    }

    #[test]
    fn dump_is_deterministic() {
        let cfg = PyramidConfig {
            input_size: (128, 128),
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        build_lattice(&cfg).unwrap().dump(&mut a).unwrap();
        build_lattice(&cfg).unwrap().dump(&mut b).unwrap();
        assert_eq!(a, b);
        let first = String::from_utf8(a).unwrap().lines().next().unwrap().to_string();
        assert_eq!(first, "P2 0 -1.5777 -2.4721 5.5777 6.4721");
    }

    #[test]
    fn assign_examples() {
        let gt = bx(1.0, 1.0, 3.0, 3.0);
        let res = assign(&[gt, bx(50.0, 50.0, 60.0, 60.0)], &[gt], StepThresholds::FIRST_STEP);
        assert_eq!(res.labels, vec![Label::Positive(0), Label::Negative]);

        let anchor = [bx(0.0, 0.0, 2.0, 2.0)];
        let res = assign(&anchor, &[gt], StepThresholds::FIRST_STEP);
        assert_eq!(res.labels, vec![Label::Negative]);
        let res = assign(&anchor, &[gt], StepThresholds::new(0.1, 0.5).unwrap());
        assert_eq!(res.labels, vec![Label::Ignored]);

        let res = assign(&anchor, &[], StepThresholds::FIRST_STEP);
        assert_eq!(res.labels, vec![Label::Negative]);
        assert_eq!(res.best, vec![None]);
    }

    #[test]
    fn ties_go_to_lowest_gt_index() {
        let g = bx(0.0, 0.0, 10.0, 10.0);
        let res = assign(&[g], &[g, g], StepThresholds::FIRST_STEP);
        assert_eq!(res.labels, vec![Label::Positive(0)]);
    }

    #[test]
    fn thresholds_validate() {
        assert!(StepThresholds::new(0.9, 0.5).is_err());
        assert!(StepThresholds::new(0.5, 0.5).is_err());
        assert!(StepThresholds::new(-0.1, 0.5).is_err());
        assert!(StepThresholds::new(0.3, 1.1).is_err());
        assert!(StepThresholds::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn refine_examples() {
        let a = [bx(0.0, 0.0, 8.0, 8.0)];
        assert_eq!(refine_anchors(&a, &[4.0], &[[0.0; 4]]).unwrap(), a.to_vec());
        assert_eq!(
            refine_anchors(&a, &[4.0], &[[0.5; 4]]).unwrap(),
            vec![bx(2.0, 2.0, 10.0, 10.0)]
        );
        let collapsed = refine_anchors(&a, &[4.0], &[[1.5, 0.0, -0.5, 0.0]]).unwrap()[0];
        assert_eq!(collapsed.width(), 1.0);
        assert_eq!(collapsed.center().0, 6.0);
        assert!(refine_anchors(&a, &[4.0], &[[f64::NAN, 0.0, 0.0, 0.0]]).is_err());
        assert!(refine_anchors(&a, &[4.0], &[]).is_err());
    }

    #[test]
    fn encode_inverts_refine() {
        let a = bx(-1.5777, -2.4721, 5.5777, 6.4721);
        let t = bx(3.0, 1.25, 11.0, 9.5);
        let d = encode_deltas(&a, &t, 4.0);
        let r = refine_one(&a, 4.0, &d).unwrap();
        assert!(r.iou(&t) > 1.0 - 1e-12);
    }

    #[test]
    fn two_step_moves_anchor_from_ignored_to_positive() {
        let cfg = PyramidConfig {
            input_size: (128, 128),
            ..Default::default()
        };
        let lattice = build_lattice(&cfg).unwrap();
        let gts = [bx(0.0, 0.0, 10.0, 10.0)];
        let mut refined = lattice.anchors().to_vec();
        // anchor 0 starts at IoU 0.45 and is refined to IoU 0.8
        let mut originals = lattice.anchors().to_vec();
        originals[0] = bx(0.0, 0.0, 10.0, 4.5);
        assert!((originals[0].iou(&gts[0]) - 0.45).abs() < 1e-12);
        refined[0] = bx(0.0, 0.0, 10.0, 8.0);
        assert!((refined[0].iou(&gts[0]) - 0.8).abs() < 1e-12);
        let step1 = assign(&originals, &gts, StepThresholds::FIRST_STEP);
        let step2 = assign(&refined, &gts, StepThresholds::SECOND_STEP);
        assert_eq!(step1.labels[0], Label::Ignored);
        assert_eq!(step2.labels[0], Label::Positive(0));

        let (a, b) = two_step_assign(
            &lattice,
            &gts,
            lattice.anchors(),
            StepThresholds::FIRST_STEP,
            StepThresholds::FIRST_STEP,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(two_step_assign(&lattice, &gts, &refined[1..], StepThresholds::FIRST_STEP, StepThresholds::SECOND_STEP).is_err());
    }
}
