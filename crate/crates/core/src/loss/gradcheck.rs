//! Central finite-difference checks of the analytic loss gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{focal_loss, iou_loss, ClassSample, FocalParams};
use crate::error::Result;
use crate::exec::{self, Execution};
use crate::geometry::BBox;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// A check fails at or above this relative error.
pub const MAX_REL_ERR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOp {
    Focal,
    Iou,
}

impl CheckOp {
    pub fn name(self) -> &'static str {
        match self {
            CheckOp::Focal => "focal",
            CheckOp::Iou => "iou",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckInput {
    Focal { sample: ClassSample, params: FocalParams },
    Iou { pred: BBox, gt: BBox },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckPoint {
    pub input: CheckInput,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest per-component relative error.
    pub rel_err: f64,
}

impl CheckPoint {
    pub fn passed(&self) -> bool {
        self.rel_err < MAX_REL_ERR
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(",")
}

impl fmt::Display for CheckPoint {
    /// `op p_or_coords analytic fd rel_err`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.input {
            CheckInput::Focal { sample, params } => write!(
                f,
                "focal p={:.6},y={},alpha={},gamma={:.4}",
                sample.p,
                if sample.positive { 1 } else { -1 },
                params.alpha.map_or("none".to_string(), |a| format!("{a:.4}")),
                params.gamma
            )?,
            CheckInput::Iou { pred, gt } => {
                let c = |b: &BBox| b.corners().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
                write!(f, "iou {};{}", c(pred), c(gt))?
            }
        }
        write!(f, " {} {} {:.3e}", join(&self.analytic), join(&self.numeric), self.rel_err)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn check_focal(sample: ClassSample, params: FocalParams) -> Result<CheckPoint> {
    let analytic = focal_loss(sample, params)?.gradient;
    let at = |p: f64| -> Result<f64> { Ok(focal_loss(ClassSample { p, ..sample }, params)?.value) };
    let numeric = (at(sample.p + FD_STEP)? - at(sample.p - FD_STEP)?) / (2.0 * FD_STEP);
    Ok(CheckPoint {
        input: CheckInput::Focal { sample, params },
        analytic: vec![analytic],
        numeric: vec![numeric],
        rel_err: relative_error(analytic, numeric),
    })
}

pub fn check_iou(pred: BBox, gt: BBox) -> Result<CheckPoint> {
    let analytic = iou_loss(&pred, &gt)?.gradient;
    let mut numeric = [0.0; 4];
    for k in 0..4 {
        let shifted = |d: f64| -> Result<f64> {
            let mut c = pred.corners();
            c[k] += d;
            Ok(iou_loss(&BBox::try_from(c)?, &gt)?.value)
        };
        numeric[k] = (shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP);
    }
    let rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    Ok(CheckPoint {
        input: CheckInput::Iou { pred, gt },
        analytic: analytic.to_vec(),
        numeric: numeric.to_vec(),
        rel_err,
    })
}

/// Random focal-loss input with `p` in `[0.01, 0.99]`.
pub fn random_focal_input<R: Rng>(rng: &mut R) -> (ClassSample, FocalParams) {
    let p = rng.random_range(0.01..=0.99);
    let positive = rng.random_bool(0.5);
    let alpha = if rng.random_bool(0.2) {
        None
    } else {
        Some(rng.random_range(0.05..0.95))
    };
    let gamma = rng.random_range(0.0..4.0);
    (ClassSample { p, positive }, FocalParams { alpha, gamma })
}

/// Random overlapping box pair whose edges stay well away from each other,
/// so no kink of the IoU loss lies within the finite-difference stencil.
pub fn random_overlapping_pair<R: Rng>(rng: &mut R) -> (BBox, BBox) {
    const MIN_GAP: f64 = 1e-3;
    loop {
        let gx: f64 = rng.random_range(0.0..200.0);
        let gy: f64 = rng.random_range(0.0..200.0);
        let gw: f64 = rng.random_range(2.0..120.0);
        let gh: f64 = rng.random_range(2.0..120.0);
        let w: f64 = gw * rng.random_range(0.5..2.0);
        let h: f64 = gh * rng.random_range(0.5..2.0);
        let x = gx + rng.random_range(-0.8..0.8) * w.min(gw);
        let y = gy + rng.random_range(-0.8..0.8) * h.min(gh);
        let (Ok(gt), Ok(pred)) = (BBox::from_xywh(gx, gy, gw, gh), BBox::from_xywh(x, y, w, h)) else {
            continue;
        };
        let p = pred.corners();
        let g = gt.corners();
        let separated = [(p[0], g[0]), (p[0], g[2]), (p[2], g[0]), (p[2], g[2]), (p[1], g[1]), (p[1], g[3]), (p[3], g[1]), (p[3], g[3])]
            .iter()
            .all(|(a, b)| (a - b).abs() > MIN_GAP);
        if separated && pred.intersection_area(&gt) > 0.0 {
            return (pred, gt);
        }
    }
}

/// Run `n` checks of `op`. Point `i` draws from a generator seeded with
/// `seed + i`, so results do not depend on the execution mode.
pub fn run(op: CheckOp, n: usize, seed: u64, exec: Execution) -> Result<Vec<CheckPoint>> {
    exec::map_range(exec, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        match op {
            CheckOp::Focal => {
                let (s, fp) = random_focal_input(&mut rng);
                check_focal(s, fp)
            }
            CheckOp::Iou => {
                let (p, g) = random_overlapping_pair(&mut rng);
                check_iou(p, g)
            }
        }
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_points_pass() {
        for op in [CheckOp::Focal, CheckOp::Iou] {
            let points = run(op, 1000, 7, Execution::default()).unwrap();
            let worst = points.iter().map(|p| p.rel_err).fold(0.0, f64::max);
            assert!(worst < MAX_REL_ERR, "{} worst rel err {worst}", op.name());
        }
    }

    #[test]
    fn execution_modes_agree() {
        let a = run(CheckOp::Iou, 50, 3, Execution::Sequential).unwrap();
        let b = run(CheckOp::Iou, 50, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn line_format() {
        let s = ClassSample { p: 0.5, positive: true };
        let line = check_focal(s, FocalParams::default()).unwrap().to_string();
        let fields: Vec<_> = line.split(' ').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], "focal");
    }
}
