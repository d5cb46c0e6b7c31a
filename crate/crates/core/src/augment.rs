//! Seedable training-sample plans.
//!
//! Plans are pure descriptions (scale factor, crop window, flip, photometric
//! deltas) computed from image dimensions and boxes. Applying them to pixels
//! is left to whatever raster backend consumes them.
//!
//! Data-anchor-sampling picks a face, finds the anchor scale nearest to its
//! size, then draws a target scale at or below one pyramid step above it and
//! resizes the image so the face lands on that scale.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::PyramidConfig;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Half a pyramid step: target scales are jittered by `2^(+-1/4)`.
pub const SCALE_JITTER_EXP: f64 = 0.25;
/// Boxes keeping less than this fraction of their area inside the crop are
/// dropped.
pub const MIN_KEPT_FRACTION: f64 = 0.3;

pub fn scale_jitter() -> f64 {
    2f64.powf(SCALE_JITTER_EXP)
}

/// Ascending set of anchor side lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorScaleSet {
    scales: Vec<f64>,
}

impl AnchorScaleSet {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::arg("scales", "anchor scales must be positive and finite"));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("scales", "anchor scales must be strictly ascending"));
        }
        Ok(AnchorScaleSet { scales })
    }

    pub fn from_pyramid(cfg: &PyramidConfig) -> Result<Self> {
        AnchorScaleSet::new(cfg.anchor_scales())
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

impl Default for AnchorScaleSet {
    fn default() -> Self {
        AnchorScaleSet::from_pyramid(&PyramidConfig::default()).expect("default pyramid is valid")
    }
}

/// Index and value of the scale closest to `s_face`; ties go to the smaller
/// index.
pub fn nearest_anchor_scale(s_face: f64, set: &AnchorScaleSet) -> Result<(usize, f64)> {
    if !(s_face > 0.0 && s_face.is_finite()) {
        return Err(Error::arg("s_face", format!("must be positive, got {s_face}")));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in set.scales.iter().enumerate() {
        match best {
            Some((_, b)) if (s_face - s).abs() >= (s_face - b).abs() => {}
            _ => best = Some((i, s)),
        }
    }
    best.ok_or_else(|| Error::arg("set", "anchor scale set is empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Photometric {
    pub const IDENTITY: Photometric = Photometric {
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
    };
}

pub const BRIGHTNESS_RANGE: f64 = 32.0;
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.5);
pub const SATURATION_RANGE: (f64, f64) = (0.5, 1.5);

/// Brightness, contrast and saturation distortions, each applied with
/// probability 0.5. Always consumes six draws.
pub fn photometric_plan<R: Rng>(rng: &mut R) -> Photometric {
    let mut component = |lo: f64, hi: f64, identity: f64| {
        let apply = rng.random_bool(0.5);
        let value = rng.random_range(lo..=hi);
        if apply {
            value
        } else {
            identity
        }
    };
    Photometric {
        brightness: component(-BRIGHTNESS_RANGE, BRIGHTNESS_RANGE, 0.0),
        contrast: component(CONTRAST_RANGE.0, CONTRAST_RANGE.1, 1.0),
        saturation: component(SATURATION_RANGE.0, SATURATION_RANGE.1, 1.0),
    }
}

/// One data-anchor-sampling draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub s_face: f64,
    pub s_anchor: f64,
    pub s_random: f64,
    pub s_star: f64,
    /// Crop window in resized-image coordinates.
    pub crop: BBox,
    pub flip: bool,
    pub photometric: Photometric,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub anchor_index: usize,
    #[serde(skip)]
    pub target_index: usize,
    /// How far the crop extends past the resized image: left, top, right,
    /// bottom. The excess is zero-padded.
    #[serde(skip)]
    pub padding: [f64; 4],
    /// Raw uniform draws in the order they were consumed.
    #[serde(skip)]
    pub rng_trace: Vec<f64>,
}

impl SamplePlan {
    /// A plan that leaves boxes untouched: unit scale, crop at the origin.
    pub fn identity(crop_w: f64, crop_h: f64) -> Result<Self> {
        Ok(SamplePlan {
            s_face: 1.0,
            s_anchor: 1.0,
            s_random: 1.0,
            s_star: 1.0,
            crop: BBox::new(0.0, 0.0, crop_w, crop_h)?,
            flip: false,
            photometric: Photometric::IDENTITY,
            seed: None,
            anchor_index: 0,
            target_index: 0,
            padding: [0.0; 4],
            rng_trace: Vec::new(),
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

struct Tracer<'a, R> {
    rng: &'a mut R,
    trace: Vec<f64>,
}

impl<R: Rng> Tracer<'_, R> {
    fn uniform(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        self.trace.push(u);
        u
    }

    fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// Overrides for pinning individual draws in tests and tools.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleOverrides {
    pub target_index: Option<usize>,
    pub s_random: Option<f64>,
}

pub fn data_anchor_sample<R: Rng>(
    face: &BBox,
    all_gts: &[BBox],
    image_size: (f64, f64),
    set: &AnchorScaleSet,
    train_size: f64,
    rng: &mut R,
) -> Result<SamplePlan> {
    data_anchor_sample_with(face, all_gts, image_size, set, train_size, SampleOverrides::default(), rng)
}

pub fn data_anchor_sample_with<R: Rng>(
    face: &BBox,
    all_gts: &[BBox],
    image_size: (f64, f64),
    set: &AnchorScaleSet,
    train_size: f64,
    overrides: SampleOverrides,
    rng: &mut R,
) -> Result<SamplePlan> {
    if !all_gts.contains(face) {
        return Err(Error::arg("face", "selected face is not one of the image's boxes"));
    }
    if !(train_size > 0.0 && train_size.is_finite()) {
        return Err(Error::arg("train_size", format!("must be positive, got {train_size}")));
    }
    let (img_w, img_h) = image_size;
    if !(img_w > 0.0 && img_h > 0.0) {
        return Err(Error::arg("image_size", "image dimensions must be positive"));
    }
    let mut t = Tracer { rng, trace: Vec::new() };

    let s_face = face.side();
    let (anchor_index, s_anchor) = nearest_anchor_scale(s_face, set)?;
    let max_target = (anchor_index + 1).min(set.len() - 1);
    let drawn = t.index(max_target + 1);
    let target_index = match overrides.target_index {
        Some(i) if i < set.len() => i,
        Some(i) => return Err(Error::arg("target_index", format!("{i} is out of range"))),
        None => drawn,
    };
    let target = set.scales[target_index];
    let jitter = scale_jitter();
    let drawn = t.range(target / jitter, target * jitter);
    let s_random_draw = overrides.s_random.unwrap_or(drawn);
    let s_star = s_random_draw / s_face;
    // Recompute so that s_star * s_face == s_random holds bit for bit.
    let s_random = s_star * s_face;

    let resized_face = face.scaled(s_star)?;
    let (rw, rh) = (img_w * s_star, img_h * s_star);
    let x0 = crop_origin(&mut t, resized_face.x1(), resized_face.x2(), rw, train_size);
    let y0 = crop_origin(&mut t, resized_face.y1(), resized_face.y2(), rh, train_size);
    let crop = BBox::new(x0, y0, x0 + train_size, y0 + train_size)?;
    let padding = [
        (-x0).max(0.0),
        (-y0).max(0.0),
        (x0 + train_size - rw).max(0.0),
        (y0 + train_size - rh).max(0.0),
    ];
    let flip = t.uniform() < 0.5;
    let photometric = photometric_plan(t.rng);

    Ok(SamplePlan {
        s_face,
        s_anchor,
        s_random,
        s_star,
        crop,
        flip,
        photometric,
        seed: None,
        anchor_index,
        target_index,
        padding,
        rng_trace: t.trace,
    })
}

/// Uniform crop origin along one axis such that `[lo, hi]` lies inside the
/// crop, intersected with the origins that keep the crop over the image.
fn crop_origin<R: Rng>(t: &mut Tracer<'_, R>, lo: f64, hi: f64, extent: f64, side: f64) -> f64 {
    let (mut a, mut b) = (hi - side, lo);
    if a > b {
        // The face is larger than the crop: centre on it.
        let c = 0.5 * (lo + hi) - 0.5 * side;
        t.uniform();
        return c;
    }
    let (c, d) = if extent >= side { (0.0, extent - side) } else { (extent - side, 0.0) };
    if a.max(c) <= b.min(d) {
        a = a.max(c);
        b = b.min(d);
    }
    t.range(a, b)
}

/// Scale by `s_star`, shift into the crop, mirror if flipped, drop boxes
/// that keep less than 30% of their scaled area, and clip the survivors.
pub fn transform_boxes(boxes: &[BBox], plan: &SamplePlan) -> Vec<BBox> {
    let crop = plan.crop;
    let local = BBox::new(0.0, 0.0, crop.width(), crop.height()).expect("crop is valid");
    boxes
        .iter()
        .filter_map(|b| {
            let scaled = b.scaled(plan.s_star).ok()?;
            let kept = scaled.intersection_area(&crop);
            if kept < MIN_KEPT_FRACTION * scaled.area() {
                return None;
            }
            let mut moved = scaled.translated(-crop.x1(), -crop.y1()).ok()?;
            if plan.flip {
                moved = moved.flipped(crop.width()).ok()?;
            }
            moved.clipped_to(&local)
        })
        .collect()
}

/// Map crop-frame boxes back into original image coordinates.
pub fn inverse_transform_boxes(boxes: &[BBox], plan: &SamplePlan) -> Result<Vec<BBox>> {
    boxes
        .iter()
        .map(|b| {
            let b = if plan.flip { b.flipped(plan.crop.width())? } else { *b };
            b.translated(plan.crop.x1(), plan.crop.y1())?.scaled(1.0 / plan.s_star)
        })
        .collect()
}

/// SSD-style random expand-then-crop window, the alternative to
/// data-anchor-sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    /// Canvas enlargement factor (>= 1); the image sits at `image_offset`.
    pub expand: f64,
    pub image_offset: (f64, f64),
    /// Square crop in expanded-canvas coordinates.
    pub crop: BBox,
    /// Factor mapping the crop onto the training size.
    pub resize: f64,
    pub flip: bool,
    pub photometric: Photometric,
}

pub const MAX_EXPAND: f64 = 4.0;
pub const MIN_CROP_FRACTION: f64 = 0.3;

pub fn random_expand_crop<R: Rng>(image_size: (f64, f64), train_size: f64, rng: &mut R) -> Result<CropPlan> {
    let (w, h) = image_size;
    if !(w > 0.0 && h > 0.0 && train_size > 0.0) {
        return Err(Error::arg("image_size", "image and training sizes must be positive"));
    }
    let expand = if rng.random_bool(0.5) {
        rng.random_range(1.0..=MAX_EXPAND)
    } else {
        1.0
    };
    let (cw, ch) = (w * expand, h * expand);
    let image_offset = (rng.random_range(0.0..=cw - w), rng.random_range(0.0..=ch - h));
    let short = cw.min(ch);
    let side = short * rng.random_range(MIN_CROP_FRACTION..=1.0);
    let x0 = rng.random_range(0.0..=cw - side);
    let y0 = rng.random_range(0.0..=ch - side);
    let flip = rng.random_bool(0.5);
    let photometric = photometric_plan(rng);
    Ok(CropPlan {
        expand,
        image_offset,
        crop: BBox::new(x0, y0, x0 + side, y0 + side)?,
        resize: train_size / side,
        flip,
        photometric,
    })
}

/// A full training-sample plan: data-anchor-sampling or the ordinary random
/// crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainingPlan {
    AnchorSampling(SamplePlan),
    RandomCrop(CropPlan),
}

/// Choose data-anchor-sampling with probability `anchor_sampling_prob`,
/// selecting the face uniformly among `gts`; otherwise plan a random crop.
pub fn plan_training_sample<R: Rng>(
    gts: &[BBox],
    image_size: (f64, f64),
    set: &AnchorScaleSet,
    train_size: f64,
    anchor_sampling_prob: f64,
    rng: &mut R,
) -> Result<TrainingPlan> {
    if !(0.0..=1.0).contains(&anchor_sampling_prob) {
        return Err(Error::arg("anchor_sampling_prob", "must lie in [0, 1]"));
    }
    if !gts.is_empty() && rng.random_bool(anchor_sampling_prob) {
        let face = gts[rng.random_range(0..gts.len())];
        let plan = data_anchor_sample(&face, gts, image_size, set, train_size, rng)?;
        Ok(TrainingPlan::AnchorSampling(plan))
    } else {
        Ok(TrainingPlan::RandomCrop(random_expand_crop(image_size, train_size, rng)?))
    }
}
