use ipgnet::detector::{
    assign_targets, average_precision, decode, decode_and_nms, detection_loss, encode, evaluate_ap, nms,
    parse_detections, write_detections, Anchor, AnchorSet, Assignment, BBox, DetectionBox, EvalParams, GtBox, Head,
    AP_IOU,
};
use ipgnet::gradcheck::{run_check, GRADCHECK_TOL};
use ipgnet::nn::Ctx;
use ipgnet::{Error, Mode, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{exhaustive_nms, iou_near_threshold, random_box, ref_iou};

fn anchor_set(boxes: &[BBox]) -> AnchorSet {
    let anchors = boxes
        .iter()
        .map(|b| {
            let (cx, cy) = b.center();
            Anchor { cx, cy, w: b.width(), h: b.height(), level: 0 }
        })
        .collect();
    AnchorSet {
        anchors,
        level_dims: vec![(1, boxes.len())],
        level_offsets: vec![0],
        image_hw: (100, 100),
    }
}

#[test]
fn anchor_layout_for_four_levels() {
    let a = AnchorSet::new((128, 128), &[(32, 32), (16, 16), (8, 8), (4, 4)]).unwrap();
    assert_eq!(a.len(), 32 * 32 + 16 * 16 + 8 * 8 + 4 * 4);
    assert_eq!(a.len(), 1360);
    assert_eq!(a.level_offsets, vec![0, 1024, 1280, 1344]);
    let first = a.anchors[0];
    assert_eq!((first.cx, first.cy, first.w, first.h), (2.0, 2.0, 16.0, 16.0));
    let last = a.anchors[1359];
    assert_eq!((last.cx, last.cy, last.w, last.h, last.level), (112.0, 112.0, 128.0, 128.0, 3));
    assert!(matches!(AnchorSet::new((128, 128), &[(30, 30)]), Err(Error::Shape(_))));
}

#[test]
fn zero_delta_decodes_to_anchor() {
    let a = Anchor { cx: 10.0, cy: 20.0, w: 16.0, h: 32.0, level: 0 };
    assert_eq!(decode([0.0; 4], &a), a.bbox());
    assert_eq!(a.bbox(), BBox::new(2.0, 4.0, 18.0, 36.0));
}

#[test]
fn identical_anchor_is_positive_disjoint_is_negative() {
    let anchors = anchor_set(&[BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(50.0, 50.0, 60.0, 60.0)]);
    let gts = [GtBox { bounds: BBox::new(0.0, 0.0, 10.0, 10.0), class_idx: 2 }];
    assert_eq!(assign_targets(&anchors, &gts), vec![Assignment::Positive { gt: 0 }, Assignment::Negative]);
    assert_eq!(assign_targets(&anchors, &[]), vec![Assignment::Negative; 2]);
}

#[test]
fn three_anchor_two_box_assignment() {
    // IoUs worked out by hand:
    //   anchor 0 vs gt 0: 100 / 100 = 1
    //   anchor 1 vs gt 0: 50 / 150 = 1/3, vs gt 1: 0
    //   anchor 2 vs gt 1: 100 / 240 = 0.4167, in the ignore band, but it is
    //   gt 1's best anchor, so it is forced positive.
    let anchors = anchor_set(&[
        BBox::new(0.0, 0.0, 10.0, 10.0),
        BBox::new(5.0, 0.0, 15.0, 10.0),
        BBox::new(20.0, 0.0, 30.0, 10.0),
    ]);
    let g1 = BBox::new(20.0, 0.0, 44.0, 10.0);
    let gts = [
        GtBox { bounds: BBox::new(0.0, 0.0, 10.0, 10.0), class_idx: 0 },
        GtBox { bounds: g1, class_idx: 1 },
    ];
    assert!((ref_iou(&anchors.anchors[2].bbox(), &g1) - 100.0 / 240.0).abs() < 1e-12);
    let got = assign_targets(&anchors, &gts);
    assert_eq!(got[0], Assignment::Positive { gt: 0 });
    assert_eq!(got[1], Assignment::Negative);
    assert_eq!(got[2], Assignment::Positive { gt: 1 });

    // 70 / 130 = 0.538 for the shifted anchor: positive.
    let anchors = anchor_set(&[
        BBox::new(0.0, 0.0, 10.0, 10.0),
        BBox::new(3.0, 0.0, 13.0, 10.0),
        BBox::new(40.0, 40.0, 50.0, 50.0),
    ]);
    let gts = [GtBox { bounds: BBox::new(0.0, 0.0, 10.0, 10.0), class_idx: 0 }];
    let got = assign_targets(&anchors, &gts);
    assert_eq!(got, vec![Assignment::Positive { gt: 0 }, Assignment::Positive { gt: 0 }, Assignment::Negative]);
    let anchors = anchor_set(&[BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(4.0, 0.0, 14.0, 10.0)]);
    // 60 / 140 = 0.4286 -> ignore band.
    assert_eq!(assign_targets(&anchors, &gts), vec![Assignment::Positive { gt: 0 }, Assignment::Ignore]);
}

/// Declarative restatement of the assignment rule.
fn reference_assign(anchors: &[BBox], gts: &[BBox]) -> Vec<Assignment> {
    let mut out: Vec<Assignment> = anchors
        .iter()
        .map(|a| {
            let ious: Vec<f64> = gts.iter().map(|g| ref_iou(a, g)).collect();
            let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if gts.is_empty() || best < 0.4 {
                Assignment::Negative
            } else if best >= 0.5 {
                Assignment::Positive { gt: ious.iter().position(|&v| v == best).unwrap() }
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    for (gi, g) in gts.iter().enumerate() {
        let ious: Vec<f64> = anchors.iter().map(|a| ref_iou(a, g)).collect();
        let best = ious.iter().cloned().fold(0.0, f64::max);
        if best > 0.0 {
            out[ious.iter().position(|&v| v == best).unwrap()] = Assignment::Positive { gt: gi };
        }
    }
    out
}

#[test]
fn nms_matches_exhaustive_reference() {
    let thresh = 0.5;
    let mut suppressed = 0;
    for s in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let boxes: Vec<BBox> = (0..20).map(|_| random_box(&mut rng, 40.0, 6.0, 20.0)).collect();
        let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        if iou_near_threshold(&boxes, thresh) {
            continue;
        }
        let sets = exhaustive_nms(&boxes, &scores, thresh);
        assert_eq!(sets.len(), 1, "seed {s}: characterisation must be unique");
        let kept = nms(&boxes, &scores, thresh);
        let mask = kept.iter().fold(0u32, |m, &i| m | 1 << i);
        assert_eq!(mask, sets[0], "seed {s}");
        assert!(kept.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
        suppressed += usize::from(kept.len() < 20);
    }
    assert!(suppressed > 50, "scenes should usually contain overlaps");
}

#[test]
fn overlapping_pair_keeps_only_the_higher_score() {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0);
    let b = BBox::new(0.0, 0.0, 10.0, 6.0);
    assert!((ref_iou(&a, &b) - 0.6).abs() < 1e-12);
    assert_eq!(nms(&[a, b], &[0.9, 0.8], 0.5), vec![0]);
    assert_eq!(nms(&[b, a], &[0.8, 0.9], 0.5), vec![1]);
    assert_eq!(nms(&[a, b], &[0.9, 0.8], 0.7), vec![0, 1]);
}

#[test]
fn decode_and_nms_filters_and_suppresses() {
    // Two anchors side by side at stride 8 on a 16x8 image; both predict the
    // same box, so only the higher score survives.
    let anchors = AnchorSet::new((8, 16), &[(1, 2)]).unwrap();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let cls = Tensor::from_vec([1, 2, 1, 2], vec![logit(0.9), logit(0.8), logit(0.01), logit(0.3)]).unwrap();
    let target = BBox::new(2.0, 1.0, 12.0, 7.0);
    let d0 = encode(&target, &anchors.anchors[0]);
    let d1 = encode(&target, &anchors.anchors[1]);
    let mut data = vec![0.0; 8];
    for j in 0..4 {
        data[j * 2] = d0[j];
        data[j * 2 + 1] = d1[j];
    }
    let deltas = Tensor::from_vec([1, 4, 1, 2], data).unwrap();
    let dets = decode_and_nms(&[cls], &[deltas], &anchors, &EvalParams::default()).unwrap();
    assert_eq!(dets.len(), 1);
    let d = &dets[0];
    // Class 0 keeps one box; class 1 keeps the 0.3 box (0.01 is under the
    // score threshold).
    assert_eq!(d.len(), 2);
    assert!((d[0].score - 0.9).abs() < 1e-12 && d[0].class_idx == 0);
    assert!((d[1].score - 0.3).abs() < 1e-12 && d[1].class_idx == 1);
    for det in d {
        assert!(ref_iou(&det.bounds, &target) > 1.0 - 1e-9);
    }
}

#[test]
fn eval_params_defaults_and_validation() {
    let p = EvalParams::default();
    assert_eq!((p.score_thresh, p.nms_iou, p.max_boxes), (0.05, 0.5, 100));
    let parsed: EvalParams = serde_json::from_str("{}").unwrap();
    assert_eq!(parsed, p);
    assert!(EvalParams { nms_iou: 1.5, ..p }.validate().is_err());
    assert!(serde_json::from_str::<EvalParams>(r#"{"iou": 0.3}"#).is_err());
}

fn gt(x: f64, y: f64, s: f64, c: usize) -> GtBox {
    GtBox { bounds: BBox::new(x, y, x + s, y + s), class_idx: c }
}

fn det(b: BBox, c: usize, score: f64) -> DetectionBox {
    DetectionBox { bounds: b, class_idx: c, score }
}

#[test]
fn perfect_and_empty_detections() {
    let gts = vec![
        vec![gt(0.0, 0.0, 8.0, 0), gt(30.0, 30.0, 20.0, 1)],
        vec![gt(10.0, 10.0, 50.0, 2), gt(70.0, 5.0, 10.0, 0)],
    ];
    let dets: Vec<Vec<DetectionBox>> = gts
        .iter()
        .map(|g| g.iter().map(|g| det(g.bounds, g.class_idx, 0.8)).collect())
        .collect();
    let r = evaluate_ap(&dets, &gts, 3, AP_IOU);
    assert_eq!(r.ap, Some(1.0));
    assert_eq!(r.ap_small, Some(1.0));
    assert_eq!(r.ap_medium, Some(1.0));
    assert_eq!(r.ap_large, Some(1.0));
    assert_eq!(r.per_class, vec![Some(1.0); 3]);

    let r = evaluate_ap(&[vec![], vec![]], &gts, 3, AP_IOU);
    assert_eq!(r.ap, Some(0.0));
    assert_eq!(r.per_class, vec![Some(0.0); 3]);
}

#[test]
fn hand_worked_ranking() {
    // Ranked: TP, FP, TP, duplicate (FP), TP over 3 objects.
    // precision 1, 1/2, 2/3, 2/4, 3/5; recall 1/3, 1/3, 2/3, 2/3, 1.
    // Envelope at recall steps: 1, 2/3, 3/5 -> (1 + 2/3 + 3/5) / 3 = 34/45.
    let a = gt(0.0, 0.0, 10.0, 0);
    let b = gt(40.0, 0.0, 10.0, 0);
    let c = gt(0.0, 40.0, 10.0, 0);
    let dets = vec![
        det(a.bounds, 0, 0.95),
        det(BBox::new(80.0, 80.0, 90.0, 90.0), 0, 0.9),
        det(b.bounds, 0, 0.85),
        det(BBox::new(40.5, 0.0, 50.5, 10.0), 0, 0.8),
        det(c.bounds, 0, 0.7),
    ];
    let r = evaluate_ap(&[dets], &[vec![a, b, c]], 1, AP_IOU);
    assert!((r.ap.unwrap() - 34.0 / 45.0).abs() < 1e-12);
    assert!((average_precision(&[true, false, true, false, true], 3) - 34.0 / 45.0).abs() < 1e-12);
    assert_eq!(average_precision(&[true], 0), 0.0);
}

#[test]
fn size_buckets_route_objects() {
    // One small object detected, one large missed.
    let small = gt(0.0, 0.0, 8.0, 0);
    let large = gt(40.0, 40.0, 40.0, 0);
    let r = evaluate_ap(&[vec![det(small.bounds, 0, 0.9)]], &[vec![small, large]], 1, AP_IOU);
    assert_eq!(r.ap_small, Some(1.0));
    assert_eq!(r.ap_large, Some(0.0));
    assert_eq!(r.ap_medium, None);
    assert!((r.ap.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn ap_is_monotone_in_score_threshold() {
    for s in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..4 {
            let g: Vec<GtBox> = (0..5)
                .map(|i| GtBox { bounds: random_box(&mut rng, 64.0, 4.0, 30.0), class_idx: i % 2 })
                .collect();
            let mut d = Vec::new();
            for gb in &g {
                for _ in 0..2 {
                    let jx = rng.random_range(-3.0..3.0);
                    let jy = rng.random_range(-3.0..3.0);
                    let b = gb.bounds;
                    d.push(det(
                        BBox::new(b.x_min + jx, b.y_min + jy, b.x_max + jx, b.y_max + jy),
                        gb.class_idx,
                        rng.random_range(0.0..1.0),
                    ));
                }
            }
            for _ in 0..5 {
                d.push(det(random_box(&mut rng, 64.0, 4.0, 30.0), rng.random_range(0..2), rng.random_range(0.0..1.0)));
            }
            gts.push(g);
            dets.push(d);
        }
        let mut prev = [f64::INFINITY; 2];
        for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let kept: Vec<Vec<DetectionBox>> =
                dets.iter().map(|d| d.iter().copied().filter(|x| x.score >= t).collect()).collect();
            let r = evaluate_ap(&kept, &gts, 2, AP_IOU);
            for (c, p) in prev.iter_mut().enumerate() {
                let v = r.per_class[c].unwrap();
                assert!(v <= *p + 1e-12, "seed {s} class {c} thresh {t}: {v} > {p}");
                *p = v;
            }
        }
    }
}

#[test]
fn detection_dump_round_trips() {
    let dets = vec![
        det(BBox::new(1.25, 2.5, 10.125, 20.0), 2, 0.987654),
        det(BBox::new(0.0, 0.0, 3.0, 4.0), 0, 0.05),
    ];
    let mut text = String::new();
    write_detections(&mut text, 7, &dets);
    write_detections(&mut text, 8, &dets[..1]);
    assert_eq!(text.lines().next().unwrap(), "7 2 0.987654 1.250000 2.500000 10.125000 20.000000");
    let back = parse_detections(&text).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[0], (7, dets[0]));
    assert_eq!(back[1], (7, dets[1]));
    assert_eq!(back[2], (8, dets[0]));
    assert!(matches!(parse_detections("1 2 3"), Err(Error::Format(_))));
    assert!(matches!(parse_detections("1 x 0.5 0 0 1 1"), Err(Error::Format(_))));
}

#[test]
fn head_output_shapes_and_channel_check() {
    let mut store = ParamStore::new(3);
    let head = Head::new(&mut store, 8, 3).unwrap();
    let mut ctx = Ctx::new(&mut store, Mode::Eval);
    let a = ctx.input(Tensor::zeros([2, 8, 8, 8]));
    let b = ctx.input(Tensor::zeros([2, 8, 4, 4]));
    let out = head.forward(&mut ctx, &[a, b]).unwrap();
    assert_eq!(ctx.tape.shape(out[0].0).0, [2, 3, 8, 8]);
    assert_eq!(ctx.tape.shape(out[0].1).0, [2, 4, 8, 8]);
    assert_eq!(ctx.tape.shape(out[1].0).0, [2, 3, 4, 4]);
    // Zero features: logits equal the prior bias, so scores are 0.01.
    let p = ipgnet::tensor::sigmoid(ctx.value(out[1].0).data()[0]);
    assert!((p - 0.01).abs() < 1e-12);
    let bad = ctx.input(Tensor::zeros([1, 4, 4, 4]));
    assert!(matches!(head.forward(&mut ctx, &[bad]), Err(Error::Shape(_))));
}

/// Head outputs that agree with the assignment: +/-`margin` logits and exact
/// encoded deltas.
fn perfect_outputs(anchors: &AnchorSet, labels: &[Assignment], gts: &[GtBox], k: usize, margin: f64) -> (Tensor, Tensor) {
    let n = anchors.len();
    let mut cls = vec![-margin; k * n];
    let mut bx = vec![0.0; 4 * n];
    for (ai, l) in labels.iter().enumerate() {
        if let Assignment::Positive { gt } = *l {
            cls[gts[gt].class_idx * n + ai] = margin;
            let d = encode(&gts[gt].bounds, &anchors.anchors[ai]);
            for j in 0..4 {
                bx[j * n + ai] = d[j];
            }
        }
    }
    (
        Tensor::from_vec([1, k, 1, n], cls).unwrap(),
        Tensor::from_vec([1, 4, 1, n], bx).unwrap(),
    )
}

fn loss_of(anchors: &AnchorSet, cls: Tensor, bx: Tensor, gts: &[GtBox]) -> (f64, f64, f64, usize) {
    let labels = assign_targets(anchors, gts);
    let mut tape = Tape::new();
    let c = tape.leaf(cls, true);
    let b = tape.leaf(bx, true);
    let l = detection_loss(&mut tape, &[(c, b)], anchors, &[labels], &[gts.to_vec()]).unwrap();
    (
        tape.value(l.total).item().unwrap(),
        tape.value(l.cls).item().unwrap(),
        tape.value(l.bbox).item().unwrap(),
        l.num_positives,
    )
}

fn line_anchors(n: usize, stride: usize) -> AnchorSet {
    AnchorSet::new((stride, n * stride), &[(1, n)]).unwrap()
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let anchors = line_anchors(6, 8);
    let gts = [gt(4.0, -12.0, 30.0, 1), gt(20.0, -10.0, 28.0, 0)];
    let labels = assign_targets(&anchors, &gts);
    let (cls, bx) = perfect_outputs(&anchors, &labels, &gts, 3, 20.0);
    let (total, c, b, npos) = loss_of(&anchors, cls, bx, &gts);
    assert!(npos >= 2);
    assert!(total < 1e-3, "total {total}");
    assert!(b.abs() < 1e-12 && c < 1e-3);
}

#[test]
fn no_positives_gives_zero_box_loss() {
    let anchors = line_anchors(4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cls = ipgnet::gradcheck::random_tensor(&mut rng, [1, 2, 1, 4]);
    let bx = ipgnet::gradcheck::random_tensor(&mut rng, [1, 4, 1, 4]);
    let (total, c, b, npos) = loss_of(&anchors, cls, bx, &[]);
    assert_eq!(npos, 0);
    assert_eq!(b, 0.0);
    assert!(c.is_finite() && c > 0.0);
    assert!((total - c).abs() < 1e-15);
}

#[test]
fn loss_rejects_mismatched_levels() {
    let anchors = line_anchors(4, 8);
    let mut tape = Tape::new();
    let c = tape.leaf(Tensor::zeros([1, 2, 1, 3]), true);
    let b = tape.leaf(Tensor::zeros([1, 4, 1, 3]), true);
    let labels = vec![vec![Assignment::Negative; 4]];
    assert!(matches!(
        detection_loss(&mut tape, &[(c, b)], &anchors, &labels, &[vec![]]),
        Err(Error::Shape(_))
    ));
    assert!(matches!(detection_loss(&mut tape, &[], &anchors, &labels, &[vec![]]), Err(Error::Shape(_))));
}

#[test]
fn head_and_loss_gradients() {
    for s in 0..3 {
        for name in ["head", "detection_loss", "focal_loss", "smooth_l1"] {
            let r = run_check(name, s).unwrap();
            assert!(r.max_rel_err() < GRADCHECK_TOL, "{name} seed {s}: {:?}", r.outcome.worst);
            assert!(r.outcome.checked > 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trip(
        cx in -50.0..150.0f64, cy in -50.0..150.0f64,
        w in 1.0..120.0f64, h in 1.0..120.0f64,
        aw in 4.0..128.0f64, ah in 4.0..128.0f64,
        ax in 0.0..128.0f64, ay in 0.0..128.0f64,
    ) {
        let anchor = Anchor { cx: ax, cy: ay, w: aw, h: ah, level: 0 };
        let g = BBox::from_center(cx, cy, w, h);
        let back = decode(encode(&g, &anchor), &anchor);
        for (p, q) in [(back.x_min, g.x_min), (back.y_min, g.y_min), (back.x_max, g.x_max), (back.y_max, g.y_max)] {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn assignment_matches_reference(seed in 0u64..10_000, n_anchor in 1usize..30, n_gt in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes: Vec<BBox> = (0..n_anchor).map(|_| random_box(&mut rng, 48.0, 4.0, 24.0)).collect();
        let gt_boxes: Vec<BBox> = (0..n_gt).map(|_| random_box(&mut rng, 48.0, 4.0, 24.0)).collect();
        let gts: Vec<GtBox> = gt_boxes.iter().map(|&b| GtBox { bounds: b, class_idx: 0 }).collect();
        prop_assert_eq!(assign_targets(&anchor_set(&boxes), &gts), reference_assign(&boxes, &gt_boxes));
    }

    #[test]
    fn nms_is_permutation_invariant(seed in 0u64..10_000, n in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut rng, 40.0, 5.0, 20.0)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pb: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let mut a: Vec<usize> = nms(&boxes, &scores, 0.5);
        let mut b: Vec<usize> = nms(&pb, &ps, 0.5).into_iter().map(|i| perm[i]).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loss_is_permutation_invariant_over_anchors(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let k = 2;
        let boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut rng, 48.0, 6.0, 24.0)).collect();
        let gts: Vec<GtBox> = (0..3)
            .map(|i| GtBox { bounds: random_box(&mut rng, 48.0, 6.0, 24.0), class_idx: i % k })
            .collect();
        let cls = ipgnet::gradcheck::random_tensor(&mut rng, [1, k, 1, n]);
        let bx = ipgnet::gradcheck::random_tensor(&mut rng, [1, 4, 1, n]);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permute = |t: &Tensor, rows: usize| {
            let mut d = vec![0.0; rows * n];
            for r in 0..rows {
                for (dst, &src) in perm.iter().enumerate() {
                    d[r * n + dst] = t.data()[r * n + src];
                }
            }
            Tensor::from_vec([1, rows, 1, n], d).unwrap()
        };
        let pboxes: Vec<BBox> = perm.iter().map(|&i| boxes[i]).collect();
        let a = loss_of(&anchor_set(&boxes), cls.clone(), bx.clone(), &gts);
        let b = loss_of(&anchor_set(&pboxes), permute(&cls, k), permute(&bx, 4), &gts);
        prop_assert_eq!(a.3, b.3);
        prop_assert!((a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(1.0));
    }
}
