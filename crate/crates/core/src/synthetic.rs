//! Deterministic stand-in for the detection network.
//!
//! Given anchors and the hidden ground truth of a scene, [`score_anchors`]
//! emits what the classification and regression heads would: `c_p` face and
//! `c_n` background probabilities plus first- and second-step box deltas.
//! Quality is controlled by an IoU-to-probability link, additive Gaussian
//! score noise, and the fraction of the ideal regression delta applied.
//! [`detect_image`] then runs the full two-step chain on one scene.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchors::{self, AnchorLattice, Assignment, LevelRole, PyramidConfig, StepThresholds};
use crate::error::{Error, Result};
use crate::eval::{Difficulty, GroundTruthImage};
use crate::exec::{self, Execution};
use crate::geometry::BBox;
use crate::loss::{self, ClassSample, FocalParams, MaxOutConfig, RegressionSample, PROB_EPS};
use crate::postprocess::{self, Detection, MergeParams, ScaleRun};

/// Anchors scored per generator stream.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFn {
    /// Face probability equals the anchor's best IoU.
    Identity,
    /// `iou^k`.
    Power(f64),
}

impl QualityFn {
    pub fn apply(&self, iou: f64) -> f64 {
        match self {
            QualityFn::Identity => iou,
            QualityFn::Power(k) => iou.powf(*k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub noise_sigma: f64,
    pub quality_fn: QualityFn,
    pub seed: u64,
    pub regression_quality: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            noise_sigma: 0.0,
            quality_fn: QualityFn::Identity,
            seed: 0,
            regression_quality: 1.0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg("noise_sigma", format!("must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.regression_quality) {
            return Err(Error::arg(
                "regression_quality",
                format!("must lie in [0, 1], got {}", self.regression_quality),
            ));
        }
        if let QualityFn::Power(k) = self.quality_fn {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::arg("quality_fn", "power must be positive"));
            }
        }
        Ok(())
    }
}

/// Head outputs for every anchor of a lattice, stored channel-major per
/// anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorScores {
    pub c_p: usize,
    pub c_n: usize,
    face: Vec<f64>,
    background: Vec<f64>,
    pub step1_deltas: Vec<[f64; 4]>,
    pub step2_deltas: Vec<[f64; 4]>,
}

impl AnchorScores {
    pub fn len(&self) -> usize {
        self.step1_deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step1_deltas.is_empty()
    }

    pub fn face(&self, i: usize) -> &[f64] {
        &self.face[i * self.c_p..(i + 1) * self.c_p]
    }

    pub fn background(&self, i: usize) -> &[f64] {
        &self.background[i * self.c_n..(i + 1) * self.c_n]
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn scaled_delta(anchor: &BBox, target: Option<&BBox>, stride: f64, quality: f64) -> [f64; 4] {
    match target {
        Some(t) => anchors::encode_deltas(anchor, t, stride).map(|d| d * quality),
        None => [0.0; 4],
    }
}

/// Best ground truth with strictly positive overlap.
fn overlapping_best<'a>(b: &BBox, gts: &'a [BBox]) -> (f64, Option<&'a BBox>) {
    match anchors::best_match(b, gts) {
        Some((g, v)) if v > 0.0 => (v, Some(&gts[g])),
        _ => (0.0, None),
    }
}

pub fn score_anchors(lattice: &AnchorLattice, gts: &[BBox], maxout: &MaxOutConfig, cfg: &ScorerConfig) -> Result<AnchorScores> {
    score_anchors_with(Execution::default(), lattice, gts, maxout, cfg)
}

pub fn score_anchors_with(
    exec: Execution,
    lattice: &AnchorLattice,
    gts: &[BBox],
    maxout: &MaxOutConfig,
    cfg: &ScorerConfig,
) -> Result<AnchorScores> {
    cfg.validate()?;
    maxout.validate()?;
    let (c_p, c_n) = (maxout.c_p, maxout.c_n);
    let n = lattice.len();
    let n_chunks = n.div_ceil(CHUNK);

    type Chunk = (Vec<f64>, Vec<f64>, Vec<[f64; 4]>, Vec<[f64; 4]>);
    let chunks: Vec<Result<Chunk>> = exec::map_range(exec, n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise = |rng: &mut ChaCha8Rng| -> f64 {
            if cfg.noise_sigma == 0.0 {
                0.0
            } else {
                cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            }
        };
        let range = c * CHUNK..((c + 1) * CHUNK).min(n);
        let mut face = Vec::with_capacity(range.len() * c_p);
        let mut background = Vec::with_capacity(range.len() * c_n);
        let mut d1 = Vec::with_capacity(range.len());
        let mut d2 = Vec::with_capacity(range.len());
        for i in range {
            let anchor = &lattice.anchors()[i];
            let stride = lattice.stride_of(i);
            let (iou, target) = overlapping_best(anchor, gts);
            let q = cfg.quality_fn.apply(iou);
            for _ in 0..c_p {
                face.push(clamp(q + noise(&mut rng)));
            }
            for _ in 0..c_n {
                background.push(clamp(1.0 - q + noise(&mut rng)));
            }
            let step1 = scaled_delta(anchor, target, stride, cfg.regression_quality);
            let second_input = match lattice.role_of(i) {
                LevelRole::Regression => anchors::refine_one(anchor, stride, &step1)?,
                LevelRole::Classification => *anchor,
            };
            let (_, target2) = overlapping_best(&second_input, gts);
            d1.push(step1);
            d2.push(scaled_delta(&second_input, target2, stride, cfg.regression_quality));
        }
        Ok((face, background, d1, d2))
    });

    let mut out = AnchorScores {
        c_p,
        c_n,
        face: Vec::with_capacity(n * c_p),
        background: Vec::with_capacity(n * c_n),
        step1_deltas: Vec::with_capacity(n),
        step2_deltas: Vec::with_capacity(n),
    };
    for chunk in chunks {
        let (f, b, d1, d2) = chunk?;
        out.face.extend(f);
        out.background.extend(b);
        out.step1_deltas.extend(d1);
        out.step2_deltas.extend(d2);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub step1: StepThresholds,
    pub step2: StepThresholds,
    pub focal: FocalParams,
    pub maxout: MaxOutConfig,
    /// Classification-level anchors whose first-step background probability
    /// exceeds this are dropped before the second step.
    pub stc_filter: f64,
    pub score_threshold: f64,
    pub pre_nms_top_k: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            step1: StepThresholds::FIRST_STEP,
            step2: StepThresholds::SECOND_STEP,
            focal: FocalParams::default(),
            maxout: MaxOutConfig::default(),
            stc_filter: 0.99,
            score_threshold: 0.05,
            pre_nms_top_k: 5000,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        self.step1.validate()?;
        self.step2.validate()?;
        self.focal.validate()?;
        self.maxout.validate()?;
        if !(0.0..=1.0).contains(&self.stc_filter) {
            return Err(Error::arg("stc_filter", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::arg("score_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-run training-side statistics of the two-step chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub n_pos1: usize,
    pub n_pos2: usize,
    pub stc_loss: f64,
    pub str_loss: f64,
    pub filtered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleScaleOutput {
    pub assignments: (Assignment, Assignment),
    pub refined: Vec<BBox>,
    pub detections: Vec<Detection>,
    pub stats: StepStats,
}

/// Score, assign, filter, refine, compute losses and emit detections for
/// one image at the lattice's own resolution.
pub fn detect_single_scale(
    lattice: &AnchorLattice,
    gts: &[BBox],
    image_size: (f64, f64),
    params: &DetectorParams,
    scorer: &ScorerConfig,
) -> Result<SingleScaleOutput> {
    params.validate()?;
    let scores = score_anchors(lattice, gts, &params.maxout, scorer)?;
    let n = lattice.len();
    let anchors = lattice.anchors();

    let mut refined = Vec::with_capacity(n);
    for (i, anchor) in anchors.iter().enumerate() {
        refined.push(match lattice.role_of(i) {
            LevelRole::Regression => anchors::refine_one(anchor, lattice.stride_of(i), &scores.step1_deltas[i])?,
            LevelRole::Classification => *anchor,
        });
    }
    let (a1, a2) = anchors::two_step_assign(lattice, gts, &refined, params.step1, params.step2)?;

    let mut prob = Vec::with_capacity(n);
    let mut bg_max = Vec::with_capacity(n);
    for i in 0..n {
        let (f, b) = params.maxout.select(scores.face(i), scores.background(i))?;
        prob.push(loss::maxout_probability(f, b));
        bg_max.push(b);
    }
    let passes = |i: usize| lattice.role_of(i) == LevelRole::Regression || bg_max[i] <= params.stc_filter;

    // Two-step classification on the low levels.
    let mut omega = Vec::new();
    let mut phi = Vec::new();
    // Two-step regression on the high levels.
    let mut psi_r = Vec::new();
    let mut phi_r = Vec::new();
    let mut final_boxes = Vec::with_capacity(n);
    let mut filtered = 0;
    for i in 0..n {
        let stride = lattice.stride_of(i);
        let fin = anchors::refine_one(&refined[i], stride, &scores.step2_deltas[i])?;
        final_boxes.push(fin);
        match lattice.role_of(i) {
            LevelRole::Classification => {
                if a1.labels[i] != anchors::Label::Ignored {
                    omega.push(ClassSample { p: prob[i], positive: a1.labels[i].is_positive() });
                }
                if !passes(i) {
                    filtered += 1;
                } else if a2.labels[i] != anchors::Label::Ignored {
                    phi.push(ClassSample { p: prob[i], positive: a2.labels[i].is_positive() });
                }
            }
            LevelRole::Regression => {
                if let Some(g) = a1.labels[i].gt_index() {
                    psi_r.push(RegressionSample { pred: refined[i], gt: gts[g], positive: true });
                }
                if let Some(g) = a2.labels[i].gt_index() {
                    phi_r.push(RegressionSample { pred: fin, gt: gts[g], positive: true });
                }
            }
        }
    }
    let n_pos1 = omega.iter().filter(|s| s.positive).count() + psi_r.len();
    let n_pos2 = phi.iter().filter(|s| s.positive).count() + phi_r.len();
    let stc = loss::stc_loss(
        &omega,
        &phi,
        omega.iter().filter(|s| s.positive).count(),
        phi.iter().filter(|s| s.positive).count(),
        params.focal,
    )?;
    let str_ = loss::str_loss(&psi_r, &phi_r, psi_r.len(), phi_r.len())?;

    let frame = BBox::new(0.0, 0.0, image_size.0, image_size.1)?;
    let mut detections: Vec<Detection> = (0..n)
        .filter(|&i| passes(i) && prob[i] >= params.score_threshold)
        .filter_map(|i| {
            final_boxes[i]
                .clipped_to(&frame)
                .map(|bbox| Detection { bbox, score: prob[i] })
        })
        .collect();
    postprocess::sort_by_score(&mut detections);
    detections.truncate(params.pre_nms_top_k);

    Ok(SingleScaleOutput {
        assignments: (a1, a2),
        refined,
        detections,
        stats: StepStats {
            n_pos1,
            n_pos2,
            stc_loss: stc,
            str_loss: str_,
            filtered,
        },
    })
}

/// One test-time pass: resize factor and optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPass {
    pub scale: f64,
    pub flip: bool,
}

pub fn test_passes(scales: &[f64], flip: bool) -> Vec<TestPass> {
    let mut out = Vec::new();
    for &scale in scales {
        out.push(TestPass { scale, flip: false });
        if flip {
            out.push(TestPass { scale, flip: true });
        }
    }
    out
}

/// Reusable lattices, one per test pass.
pub struct Simulator {
    pub image_size: (u32, u32),
    pub params: DetectorParams,
    pub merge: MergeParams,
    pub scorer: ScorerConfig,
    passes: Vec<(TestPass, AnchorLattice, (f64, f64))>,
}

impl Simulator {
    /// `pyramid.input_size` is taken as the size of every scene image.
    pub fn new(
        pyramid: &PyramidConfig,
        passes: &[TestPass],
        params: DetectorParams,
        merge: MergeParams,
        scorer: ScorerConfig,
    ) -> Result<Self> {
        if passes.is_empty() {
            return Err(Error::arg("scales", "at least one test scale is required"));
        }
        params.validate()?;
        scorer.validate()?;
        let (w, h) = pyramid.input_size;
        let mut built = Vec::with_capacity(passes.len());
        for p in passes {
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(Error::arg("scales", format!("test scale must be positive, got {}", p.scale)));
            }
            let sw = w as f64 * p.scale;
            let sh = h as f64 * p.scale;
            let cfg = PyramidConfig {
                input_size: (sw.ceil() as u32, sh.ceil() as u32),
                ..pyramid.clone()
            };
            built.push((*p, anchors::build_lattice(&cfg)?, (sw, sh)));
        }
        Ok(Simulator {
            image_size: (w, h),
            params,
            merge,
            scorer,
            passes: built,
        })
    }

    /// Detections for one scene image, fused over all test passes. `index`
    /// decorrelates the scorer noise between images.
    pub fn detect(&self, gts: &[BBox], index: usize) -> Result<(Vec<Detection>, StepStats)> {
        let mut runs = Vec::with_capacity(self.passes.len());
        let mut stats = StepStats::default();
        for (k, (pass, lattice, size)) in self.passes.iter().enumerate() {
            let mut scene = Vec::with_capacity(gts.len());
            for g in gts {
                let b = g.scaled(pass.scale)?;
                scene.push(if pass.flip { b.flipped(size.0)? } else { b });
            }
            let scorer = ScorerConfig {
                seed: self
                    .scorer
                    .seed
                    .wrapping_mul(0x2545_F491_4F6C_DD1D)
                    .wrapping_add((index as u64) << 8 | k as u64),
                ..self.scorer
            };
            let out = detect_single_scale(lattice, &scene, *size, &self.params, &scorer)?;
            if k == 0 {
                stats = out.stats;
            }
            runs.push(ScaleRun {
                scale_factor: pass.scale,
                flipped: pass.flip,
                detections: out.detections,
            });
        }
        let (w, h) = self.image_size;
        let merged = postprocess::merge_scales(&runs, (w as f64, h as f64), &self.merge)?;
        Ok((merged, stats))
    }

    /// Run every image of a scene, in parallel when enabled.
    pub fn run(&self, scene: &[GroundTruthImage]) -> Result<SimulationOutput> {
        let results = exec::map_range(Execution::default(), scene.len(), |i| self.detect(&scene[i].boxes, i));
        let mut detections = BTreeMap::new();
        let mut stats = Vec::with_capacity(scene.len());
        for (img, r) in scene.iter().zip(results) {
            let (d, s) = r?;
            detections.insert(img.image_id.clone(), d);
            stats.push(s);
        }
        Ok(SimulationOutput { detections, stats })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub detections: BTreeMap<String, Vec<Detection>>,
    /// Statistics of the first test pass, per image in scene order.
    pub stats: Vec<StepStats>,
}

impl SimulationOutput {
    pub fn summary(&self) -> serde_json::Value {
        let n = self.stats.len().max(1) as f64;
        let sum = |f: fn(&StepStats) -> f64| self.stats.iter().map(f).sum::<f64>();
        serde_json::json!({
            "n_images": self.stats.len(),
            "n_detections": self.detections.values().map(Vec::len).sum::<usize>(),
            "n_pos_step1": self.stats.iter().map(|s| s.n_pos1).sum::<usize>(),
            "n_pos_step2": self.stats.iter().map(|s| s.n_pos2).sum::<usize>(),
            "filtered": self.stats.iter().map(|s| s.filtered).sum::<usize>(),
            "mean_stc_loss": sum(|s| s.stc_loss) / n,
            "mean_str_loss": sum(|s| s.str_loss) / n,
        })
    }
}

/// Face-size ranges (geometric-mean side, pixels) per difficulty tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub faces_per_image: (usize, usize),
    pub sizes: Vec<(Difficulty, f64, f64)>,
    /// Minimum empty margin between faces, in pixels.
    pub gap: f64,
}

impl SceneSpec {
    /// Large easy faces, mid-size medium faces, tiny hard faces.
    pub fn graded() -> Self {
        SceneSpec {
            faces_per_image: (4, 10),
            sizes: vec![
                (Difficulty::Easy, 48.0, 96.0),
                (Difficulty::Medium, 20.0, 40.0),
                (Difficulty::Hard, 6.0, 10.0),
            ],
            gap: 8.0,
        }
    }

    /// Only tiny faces of side `lo..=hi`, tagged hard.
    pub fn tiny(lo: f64, hi: f64) -> Self {
        SceneSpec {
            faces_per_image: (6, 12),
            sizes: vec![(Difficulty::Hard, lo, hi)],
            gap: 12.0,
        }
    }
}

/// Random non-overlapping faces. Face height/width is drawn in
/// `[1.0, 1.4]`; the side range applies to `sqrt(w * h)`.
pub fn generate_scene(n_images: usize, image_size: (u32, u32), spec: &SceneSpec, seed: u64) -> Result<Vec<GroundTruthImage>> {
    if spec.sizes.is_empty() || spec.faces_per_image.0 > spec.faces_per_image.1 {
        return Err(Error::arg("scene", "scene description needs size classes and a valid face-count range"));
    }
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let n = rng.random_range(spec.faces_per_image.0..=spec.faces_per_image.1);
        let mut boxes: Vec<BBox> = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        let mut attempts = 0;
        while boxes.len() < n && attempts < 1000 {
            attempts += 1;
            let (tag, lo, hi) = spec.sizes[boxes.len() % spec.sizes.len()];
            let side = rng.random_range(lo..=hi);
            let ratio: f64 = rng.random_range(1.0..=1.4);
            let (bw, bh) = (side / ratio.sqrt(), side * ratio.sqrt());
            if bw + 2.0 > w || bh + 2.0 > h {
                continue;
            }
            let x = rng.random_range(1.0..=w - bw - 1.0);
            let y = rng.random_range(1.0..=h - bh - 1.0);
            let b = BBox::from_xywh(x, y, bw, bh)?;
            let padded = BBox::new(x - spec.gap, y - spec.gap, x + bw + spec.gap, y + bh + spec.gap)?;
            if boxes.iter().all(|o| o.intersection_area(&padded) == 0.0) {
                boxes.push(b);
                tags.push(tag);
            }
        }
        out.push(GroundTruthImage::new(format!("scene/img_{i:04}"), boxes, tags)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_pyramid(size: u32) -> PyramidConfig {
        PyramidConfig {
            input_size: (size, size),
            ..Default::default()
        }
    }

    #[test]
    fn aligned_anchor_gets_top_score_and_zero_deltas() {
        let lattice = anchors::build_lattice(&small_pyramid(128)).unwrap();
        let gt = lattice.anchors()[10];
        let far = BBox::new(1000.0, 1000.0, 1010.0, 1010.0).unwrap();
        let s = score_anchors(&lattice, &[gt, far], &MaxOutConfig::default(), &ScorerConfig::default()).unwrap();
        assert!(s.face(10).iter().all(|p| *p == 1.0 - PROB_EPS));
        assert_eq!(s.step1_deltas[10], [0.0; 4]);
        let disjoint = (0..lattice.len()).find(|&i| lattice.anchors()[i].iou(&gt) == 0.0).unwrap();
        assert!(s.face(disjoint).iter().all(|p| *p == PROB_EPS));
        assert_eq!(s.step1_deltas[disjoint], [0.0; 4]);
    }

    #[test]
    fn full_regression_lands_on_gt() {
        let lattice = anchors::build_lattice(&small_pyramid(256)).unwrap();
        let gts = [BBox::new(40.0, 50.0, 140.0, 170.0).unwrap()];
        let s = score_anchors(&lattice, &gts, &MaxOutConfig::default(), &ScorerConfig::default()).unwrap();
        let mut checked = 0;
        for i in 0..lattice.len() {
            if lattice.anchors()[i].iou(&gts[0]) > 0.0 {
                let r = anchors::refine_one(&lattice.anchors()[i], lattice.stride_of(i), &s.step1_deltas[i]).unwrap();
                assert!(r.iou(&gts[0]) > 1.0 - 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn scoring_is_deterministic_and_mode_independent() {
        let lattice = anchors::build_lattice(&small_pyramid(256)).unwrap();
        let gts = [BBox::new(40.0, 50.0, 60.0, 75.0).unwrap()];
        let cfg = ScorerConfig { noise_sigma: 0.2, seed: 11, ..Default::default() };
        let a = score_anchors_with(Execution::Sequential, &lattice, &gts, &MaxOutConfig::default(), &cfg).unwrap();
        let b = score_anchors_with(Execution::Parallel, &lattice, &gts, &MaxOutConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = score_anchors(&lattice, &gts, &MaxOutConfig::default(), &ScorerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn refinement_does_not_lose_positives() {
        let cfg = small_pyramid(256);
        let lattice = anchors::build_lattice(&cfg).unwrap();
        let scene = generate_scene(3, cfg.input_size, &SceneSpec::graded(), 5).unwrap();
        for img in &scene {
            let out = detect_single_scale(&lattice, &img.boxes, (256.0, 256.0), &DetectorParams::default(), &ScorerConfig::default()).unwrap();
            assert!(out.assignments.1.num_positive() >= out.assignments.0.num_positive());
            assert!(out.stats.stc_loss.is_finite() && out.stats.str_loss.is_finite());
        }
    }

    #[test]
    fn scene_faces_do_not_overlap() {
        let scene = generate_scene(10, (320, 320), &SceneSpec::graded(), 1).unwrap();
        for img in &scene {
            assert!(!img.boxes.is_empty());
            for (i, a) in img.boxes.iter().enumerate() {
                for b in &img.boxes[i + 1..] {
                    assert_eq!(a.intersection_area(b), 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ScorerConfig { noise_sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(ScorerConfig { regression_quality: 1.5, ..Default::default() }.validate().is_err());
    }
}
