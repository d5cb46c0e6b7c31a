//! Axis-aligned boxes in continuous corner form.
//!
//! Width is `x2 - x1` with no `+1` pixel convention. Construction rejects
//! empty or non-finite boxes, so every [`BBox`] has a strictly positive area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let reason = if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            Some("coordinates must be finite")
        } else if x2 <= x1 {
            Some("x2 must exceed x1")
        } else if y2 <= y1 {
            Some("y2 must exceed y1")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                reason,
            }),
            None => Ok(BBox { x1, y1, x2, y2 }),
        }
    }

    /// Build from the `(x, y, w, h)` layout used by annotation files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    /// Box of the given size centred on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Geometric-mean side `sqrt(w * h)`, the scale measure shared by anchors
    /// and faces.
    pub fn side(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    /// Multiply every coordinate by `f`.
    pub fn scaled(&self, f: f64) -> Result<BBox> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::arg("f", format!("scale factor must be positive, got {f}")));
        }
        BBox::new(self.x1 * f, self.y1 * f, self.x2 * f, self.y2 * f)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Mirror about the vertical line `x = width / 2` of a frame `width` wide.
    pub fn flipped(&self, width: f64) -> Result<BBox> {
        BBox::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }

    /// Intersection with `other`, or `None` when they do not overlap.
    pub fn clipped_to(&self, other: &BBox) -> Option<BBox> {
        BBox::new(
            self.x1.max(other.x1),
            self.y1.max(other.y1),
            self.x2.min(other.x2),
            self.y2.min(other.y2),
        )
        .ok()
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    a.intersection_area(b)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

pub fn scale_box(b: &BBox, f: f64) -> Result<BBox> {
    b.scaled(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn areas() {
        assert_eq!(bx(0.0, 0.0, 1.0, 1.0).area(), 1.0);
        assert_eq!(bx(0.0, 0.0, 2.0, 2.0).area(), 4.0);
        assert_eq!(bx(0.5, 0.5, 3.5, 2.5).area(), 6.0);
    }

    #[test]
    fn intersections() {
        let unit = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(unit.intersection_area(&unit), 1.0);
        assert_eq!(unit.intersection_area(&bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(bx(0.0, 0.0, 2.0, 2.0).intersection_area(&bx(1.0, 1.0, 3.0, 3.0)), 1.0);
        // touching edges share no area
        assert_eq!(unit.intersection_area(&bx(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn ious() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((a.iou(&bx(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn scaling() {
        assert_eq!(bx(0.0, 0.0, 10.0, 10.0).scaled(0.5).unwrap(), bx(0.0, 0.0, 5.0, 5.0));
        let b = bx(1.25, 3.0, 7.5, 9.0);
        assert_eq!(b.scaled(1.0).unwrap(), b);
        assert_eq!(bx(2.0, 4.0, 6.0, 8.0).scaled(2.0).unwrap(), bx(4.0, 8.0, 12.0, 16.0));
        assert!(b.scaled(0.0).is_err());
        assert!(b.scaled(-1.0).is_err());
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert_eq!(BBox::from_xywh(1.0, 2.0, 3.0, 4.0).unwrap(), bx(1.0, 2.0, 4.0, 6.0));
    }

    #[test]
    fn serde_uses_corner_array() {
        let b = bx(1.0, 2.0, 3.5, 4.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.0,2.0,3.5,4.0]");
        assert!(serde_json::from_str::<BBox>("[1.0,2.0,0.5,4.0]").is_err());
    }

    /// Counts unit pixels covered by both boxes on an integer grid.
    fn pixel_count_intersection(a: &BBox, b: &BBox) -> f64 {
        let mut n = 0u32;
        for y in 0..64 {
            for x in 0..64 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = |r: &BBox| cx > r.x1() && cx < r.x2() && cy > r.y1() && cy < r.y2();
                if inside(a) && inside(b) {
                    n += 1;
                }
            }
        }
        n as f64
    }

    fn int_box() -> impl Strategy<Value = BBox> {
        (0u8..63, 0u8..63, 1u8..64, 1u8..64).prop_map(|(x, y, w, h)| {
            let x2 = (x as u16 + w as u16).min(64) as f64;
            let y2 = (y as u16 + h as u16).min(64) as f64;
            BBox::new(x as f64, y as f64, x2.max(x as f64 + 1.0), y2.max(y as f64 + 1.0)).unwrap()
        })
    }

    fn real_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.1..80.0f64, 0.1..80.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn pixel_counting_matches_analytic(a in int_box(), b in int_box()) {
            prop_assert_eq!(pixel_count_intersection(&a, &b), a.intersection_area(&b));
        }

        #[test]
        fn iou_symmetric_and_bounded(a in real_box(), b in real_box()) {
            let ab = a.iou(&b);
            prop_assert_eq!(ab, b.iou(&a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.iou(&a), 1.0);
            prop_assert!(a.intersection_area(&b) <= a.area().min(b.area()));
        }

        #[test]
        fn iou_scale_invariant(a in real_box(), b in real_box(), f in 0.1..10.0f64) {
            let scaled = a.scaled(f).unwrap().iou(&b.scaled(f).unwrap());
            prop_assert!((scaled - a.iou(&b)).abs() <= 1e-12);
        }
    }
}
