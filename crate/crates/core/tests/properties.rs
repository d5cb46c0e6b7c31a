use std::collections::BTreeMap;

use proptest::prelude::*;

use facedet_core::anchors::{self, Label, StepThresholds};
use facedet_core::eval::{self, Difficulty, GroundTruthImage};
use facedet_core::exec::Execution;
use facedet_core::io;
use facedet_core::postprocess::{self, MergeParams, ScaleRun};
use facedet_core::{BBox, Detection};

fn arb_box(extent: f64) -> impl Strategy<Value = BBox> {
    (0.0..extent, 0.0..extent, 1.0..extent / 2.0, 1.0..extent / 2.0).prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
}

fn arb_det(extent: f64) -> impl Strategy<Value = Detection> {
    (arb_box(extent), 0.0..=1.0f64).prop_map(|(b, s)| Detection::new(b, s).unwrap())
}

fn arb_tag() -> impl Strategy<Value = Difficulty> {
    prop_oneof![
        Just(Difficulty::Easy),
        Just(Difficulty::Medium),
        Just(Difficulty::Hard),
        Just(Difficulty::Ignore)
    ]
}

fn arb_dataset() -> impl Strategy<Value = (Vec<GroundTruthImage>, BTreeMap<String, Vec<Detection>>)> {
    prop::collection::vec(
        (prop::collection::vec((arb_box(100.0), arb_tag()), 0..6), prop::collection::vec(arb_det(100.0), 0..8)),
        1..6,
    )
    .prop_map(|images| {
        let mut gts = Vec::new();
        let mut dets = BTreeMap::new();
        for (i, (g, d)) in images.into_iter().enumerate() {
            let id = format!("img{i}");
            let (boxes, tags) = g.into_iter().unzip();
            gts.push(GroundTruthImage::new(id.clone(), boxes, tags).unwrap());
            dets.insert(id, d);
        }
        (gts, dets)
    })
}

/// Naive threshold labelling over the full IoU matrix.
fn oracle(anchors: &[BBox], gts: &[BBox], th: StepThresholds) -> Vec<Label> {
    anchors
        .iter()
        .map(|a| {
            let ious: Vec<f64> = gts.iter().map(|g| a.iou(g)).collect();
            let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            match ious.iter().position(|v| *v == best) {
                Some(g) if best >= th.theta_p => Label::Positive(g),
                Some(_) if best >= th.theta_n => Label::Ignored,
                _ => Label::Negative,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn assignment_matches_oracle(
        anchors in prop::collection::vec(arb_box(60.0), 1..60),
        gts in prop::collection::vec(arb_box(60.0), 0..8),
        n in 0.05..0.6f64,
        gap in 0.05..0.4f64,
    ) {
        let th = StepThresholds::new(n, (n + gap).min(1.0)).unwrap();
        let seq = anchors::assign_with(Execution::Sequential, &anchors, &gts, th);
        let par = anchors::assign_with(Execution::Parallel, &anchors, &gts, th);
        prop_assert_eq!(&seq, &par);
        prop_assert_eq!(seq.labels, oracle(&anchors, &gts, th));
    }

    #[test]
    fn ap_depends_only_on_score_ranking((gts, dets) in arb_dataset()) {
        let a = eval::evaluate(&dets, &gts, 0.5).unwrap();
        let squashed: BTreeMap<String, Vec<Detection>> = dets
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|d| Detection::new(d.bbox, d.score * d.score * 0.5).unwrap()).collect()))
            .collect();
        let b = eval::evaluate(&squashed, &gts, 0.5).unwrap();
        for (x, y) in [(a.easy.ap, b.easy.ap), (a.medium.ap, b.medium.ap), (a.hard.ap, b.hard.ap)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_modes_agree((gts, dets) in arb_dataset()) {
        let a = eval::evaluate_with(Execution::Sequential, &dets, &gts, 0.5).unwrap();
        let b = eval::evaluate_with(Execution::Parallel, &dets, &gts, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn subsets_are_nested((gts, dets) in arb_dataset()) {
        let r = eval::evaluate(&dets, &gts, 0.5).unwrap();
        prop_assert!(r.easy.n_gt <= r.medium.n_gt && r.medium.n_gt <= r.hard.n_gt);
        for c in [&r.easy, &r.medium, &r.hard] {
            prop_assert!((0.0..=1.0).contains(&c.ap));
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold > w[1].threshold);
                prop_assert!(w[0].recall <= w[1].recall);
            }
        }
    }

    #[test]
    fn merge_ignores_run_order(
        a in prop::collection::vec(arb_det(200.0), 0..15),
        b in prop::collection::vec(arb_det(400.0), 0..15),
    ) {
        let r1 = ScaleRun { scale_factor: 1.0, flipped: false, detections: a };
        let r2 = ScaleRun { scale_factor: 2.0, flipped: true, detections: b };
        let params = MergeParams::default();
        let x = postprocess::merge_scales(&[r1.clone(), r2.clone()], (300.0, 300.0), &params).unwrap();
        let y = postprocess::merge_scales(&[r2, r1], (300.0, 300.0), &params).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn ground_truth_round_trip((gts, _) in arb_dataset()) {
        let text = io::format_ground_truth(&gts);
        let back = io::parse_ground_truth(&text, "gt").unwrap();
        prop_assert_eq!(back.len(), gts.len());
        for (x, y) in gts.iter().zip(&back) {
            prop_assert_eq!(&x.image_id, &y.image_id);
            prop_assert_eq!(&x.tags, &y.tags);
            for (p, q) in x.boxes.iter().zip(&y.boxes) {
                for (u, v) in p.corners().iter().zip(q.corners()) {
                    prop_assert!((u - v).abs() <= 1e-3 + 1e-9);
                }
            }
        }
        prop_assert_eq!(io::format_ground_truth(&back), text);
    }
}
