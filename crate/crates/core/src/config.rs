//! JSON run configuration.
//!
//! Every section is optional; `{}` yields the defaults. Unknown keys are
//! rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::{PyramidConfig, StepThresholds};
use crate::augment::AnchorScaleSet;
use crate::error::{Error, Result};
use crate::loss::{FocalParams, MaxOutConfig};
use crate::postprocess::MergeParams;
use crate::synthetic::{DetectorParams, ScorerConfig, TestPass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Side of the square training crop.
    pub train_size: f64,
    pub anchor_sampling_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            train_size: 1024.0,
            anchor_sampling_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub scales: Vec<f64>,
    pub flip: bool,
    pub vote_iou: f64,
    pub pre_nms_iou: f64,
    pub max_dets: Option<usize>,
    pub score_threshold: f64,
    pub pre_nms_top_k: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        let m = MergeParams::default();
        PostprocessConfig {
            scales: vec![0.5, 1.0, 1.5, 2.0],
            flip: true,
            vote_iou: m.vote_iou,
            pre_nms_iou: m.pre_nms_iou,
            max_dets: m.max_dets,
            score_threshold: 0.05,
            pre_nms_top_k: 5000,
        }
    }
}

impl PostprocessConfig {
    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            vote_iou: self.vote_iou,
            pre_nms_iou: self.pre_nms_iou,
            max_dets: self.max_dets,
        }
    }

    pub fn passes(&self) -> Vec<TestPass> {
        crate::synthetic::test_passes(&self.scales, self.flip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { match_iou: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pyramid: PyramidConfig,
    pub step1: StepThresholds,
    pub step2: StepThresholds,
    pub focal: FocalParams,
    pub maxout: MaxOutConfig,
    pub stc_filter: f64,
    pub augmentation: AugmentationConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
    pub scorer: ScorerConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pyramid: PyramidConfig::default(),
            step1: StepThresholds::FIRST_STEP,
            step2: StepThresholds::SECOND_STEP,
            focal: FocalParams::default(),
            maxout: MaxOutConfig::default(),
            stc_filter: 0.99,
            augmentation: AugmentationConfig::default(),
            postprocess: PostprocessConfig::default(),
            eval: EvalConfig::default(),
            scorer: ScorerConfig::default(),
            seed: 0,
        }
    }
}

fn at(field: &str, e: Error) -> Error {
    let reason = match e {
        Error::InvalidArgument { reason, .. } => reason,
        Error::InvalidPyramid(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{reason} at {field}"))
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("must lie in [0, 1], got {v} at {field}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate().map_err(|e| at("pyramid", e))?;
        self.step1.validate().map_err(|e| at("step1", e))?;
        self.step2.validate().map_err(|e| at("step2", e))?;
        self.focal.validate().map_err(|e| at("focal", e))?;
        self.maxout.validate().map_err(|e| at("maxout", e))?;
        unit("stc_filter", self.stc_filter)?;
        let a = &self.augmentation;
        if !(a.train_size > 0.0 && a.train_size.is_finite()) {
            return Err(Error::Config(format!("must be positive, got {} at augmentation.train_size", a.train_size)));
        }
        unit("augmentation.anchor_sampling_prob", a.anchor_sampling_prob)?;
        let p = &self.postprocess;
        if p.scales.is_empty() {
            return Err(Error::Config("at least one scale is required at postprocess.scales".into()));
        }
        if let Some(s) = p.scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("scale must be positive, got {s} at postprocess.scales")));
        }
        unit("postprocess.vote_iou", p.vote_iou)?;
        unit("postprocess.pre_nms_iou", p.pre_nms_iou)?;
        unit("postprocess.score_threshold", p.score_threshold)?;
        unit("eval.match_iou", self.eval.match_iou)?;
        self.scorer.validate().map_err(|e| at("scorer", e))?;
        Ok(())
    }

    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            step1: self.step1,
            step2: self.step2,
            focal: self.focal,
            maxout: self.maxout,
            stc_filter: self.stc_filter,
            score_threshold: self.postprocess.score_threshold,
            pre_nms_top_k: self.postprocess.pre_nms_top_k,
        }
    }

    pub fn anchor_scale_set(&self) -> Result<AnchorScaleSet> {
        AnchorScaleSet::from_pyramid(&self.pyramid)
    }

    /// Effective configuration followed by where each default comes from.
    pub fn explain(&self) -> Result<String> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push_str("\n\nprovenance:\n");
        for (key, note) in PROVENANCE {
            out.push_str(&format!("  {key:<36} {note}\n"));
        }
        Ok(out)
    }
}

const PROVENANCE: &[(&str, &str)] = &[
    ("pyramid.levels", "P2..P7, strides 4..128 (upstream default)"),
    ("pyramid.scale_multipliers", "2 and 2*sqrt(2) times the stride (upstream default)"),
    ("pyramid.aspect_ratio", "1.25 height/width (upstream default)"),
    ("pyramid.input_size", "1024x1024 training resolution (upstream default)"),
    ("step1", "theta_n 0.3, theta_p 0.7 (upstream default)"),
    ("step2", "theta_n 0.4, theta_p 0.5 (upstream default)"),
    ("focal", "alpha 0.25, gamma 2 (common focal-loss setting)"),
    ("maxout", "c_p 3, c_n 3 (upstream default)"),
    ("stc_filter", "0.99 background probability (two-step refinement default; local decision)"),
    ("augmentation.train_size", "1024, the training input size (upstream default)"),
    ("augmentation.anchor_sampling_prob", "0.5 (upstream default)"),
    ("postprocess.scales", "stand-in test-scale set (local decision)"),
    ("postprocess.flip", "horizontal flip at test time (reference multi-scale test code)"),
    ("postprocess.vote_iou", "0.5 box-voting overlap (local decision)"),
    ("postprocess.pre_nms_iou", "0.3 per-scale suppression overlap (local decision)"),
    ("postprocess.max_dets", "750 detections per image (local decision)"),
    ("postprocess.score_threshold", "0.05 (local decision)"),
    ("postprocess.pre_nms_top_k", "5000 per scale (local decision)"),
    ("eval.match_iou", "0.5 benchmark matching overlap (configurable)"),
    ("scorer", "synthetic scorer: identity quality, no noise, exact regression"),
    ("seed", "0"),
];

/// Parse a configuration from JSON text. Syntax errors report line and
/// column; invariant violations report the offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "config".into(),
        line: e.line(),
        reason: format!("column {}: {e}", e.column()),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        Error::Parse { line, reason, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            reason,
        },
        other => other,
    })
}
