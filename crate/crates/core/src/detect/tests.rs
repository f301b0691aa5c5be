use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::Graph;
use crate::losses::{ssd_multibox_loss, FocalParams};
use crate::nn::{Ctx, ParamStore};
use crate::snn::{DetectorConfig, FusionMode};
use crate::tensor::Tensor;

fn rand_box(rng: &mut ChaCha8Rng, span: f64) -> BBox {
    BBox::new(
        rng.gen_range(0.0..span),
        rng.gen_range(0.0..span),
        rng.gen_range(2.0..span / 2.0),
        rng.gen_range(2.0..span / 2.0),
    )
}

fn det(class: u32, score: f64, b: BBox) -> Detection {
    Detection { class, score, bbox: b }
}

#[test]
fn iou_examples() {
    let a = BBox::new(0.0, 0.0, 1.0, 1.0);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &BBox::new(3.0, 3.0, 1.0, 1.0)), 0.0);
    assert!((iou(&a, &BBox::new(0.5, 0.0, 1.0, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn encode_examples() {
    let a = BBox::new(10.0, 20.0, 30.0, 40.0);
    assert_eq!(encode_box(&a, &a).unwrap(), [0.0; 4]);
    let wide = BBox::from_center(25.0, 40.0, 60.0, 40.0);
    let off = encode_box(&wide, &a).unwrap();
    assert!((off[2] - 2f64.ln()).abs() < 1e-15);
    assert!(encode_box(&BBox::new(0.0, 0.0, 0.0, 3.0), &a).is_err());
}

#[test]
fn encode_decode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let (g, a) = (rand_box(&mut rng, 300.0), rand_box(&mut rng, 300.0));
        let back = decode_box(&encode_box(&g, &a).unwrap(), &a);
        for (x, y) in [(back.x, g.x), (back.y, g.y), (back.w, g.w), (back.h, g.h)] {
            assert!((x - y).abs() <= 1e-9, "{g:?} {back:?}");
        }
    }
}

#[test]
fn gt_filter_examples() {
    let mk = |w, h| det(0, 1.0, BBox::new(0.0, 0.0, w, h));
    let kept = filter_gt_boxes(&[mk(10.0, 28.0), mk(30.0, 30.0), mk(9.0, 100.0)], 10.0, 30.0);
    assert_eq!(kept, vec![mk(30.0, 30.0)]);
    assert_eq!(filter_gt_boxes(&kept, 10.0, 30.0), kept);
}

#[test]
fn anchor_examples() {
    let one = AnchorConfig {
        sizes: vec![8.0],
        scales: vec![1.0],
        ratios: vec![1.0],
    };
    let s = generate_anchors(&[(1, 1)], (40, 60), &one).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.boxes[0].center(), (30.0, 20.0));

    let six = AnchorConfig {
        sizes: vec![32.0, 64.0, 128.0],
        scales: vec![1.0, 1.5],
        ratios: vec![1.0, 2.0, 0.5],
    };
    let s = generate_anchors(&[(30, 38), (15, 19), (7, 9)], (240, 304), &six).unwrap();
    assert_eq!(s.len(), 8_928);
    assert_eq!(s.levels[1].offset, 30 * 38 * 6);
    assert!(generate_anchors(&[(2, 2)], (8, 8), &six).is_err());
}

#[test]
fn anchor_count_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let levels: Vec<(usize, usize)> = (0..rng.gen_range(1..5))
            .map(|_| (rng.gen_range(1..12), rng.gen_range(1..12)))
            .collect();
        let cfg = AnchorConfig {
            sizes: vec![10.0; levels.len()],
            scales: vec![1.0; rng.gen_range(1..3)],
            ratios: vec![1.0; rng.gen_range(1..4)],
        };
        let s = generate_anchors(&levels, (64, 64), &cfg).unwrap();
        let a = cfg.scales.len() * cfg.ratios.len();
        assert_eq!(s.len(), levels.iter().map(|(h, w)| h * w * a).sum::<usize>());
    }
}

fn reference_match(anchors: &[BBox], gts: &[BBox], pos: f64, neg: f64) -> Vec<Match> {
    let m: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| iou(a, g)).collect()).collect();
    let mut out: Vec<Match> = m
        .iter()
        .map(|row| {
            if row.is_empty() {
                return Match::Negative;
            }
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            if row[best] >= pos {
                Match::Positive(best)
            } else if row[best] < neg {
                Match::Negative
            } else {
                Match::Ignored
            }
        })
        .collect();
    for g in 0..gts.len() {
        let best = (0..anchors.len()).fold(0, |b, i| if m[i][g] > m[b][g] { i } else { b });
        out[best] = Match::Positive(g);
    }
    out
}

#[test]
fn matcher_examples_and_reference() {
    let anchors = generate_anchors(&[(8, 8)], (64, 64), &AnchorConfig { sizes: vec![12.0], scales: vec![1.0], ratios: vec![1.0, 2.0] })
        .unwrap()
        .boxes;
    assert!(match_anchors(&anchors, &[], 0.5, 0.4).unwrap().iter().all(|m| *m == Match::Negative));
    let tiny = [BBox::new(3.0, 3.0, 1.0, 1.0)];
    let m = match_anchors(&anchors, &tiny, 0.5, 0.4).unwrap();
    assert_eq!(m.iter().filter(|m| **m == Match::Positive(0)).count(), 1);
    assert!(match_anchors(&anchors, &tiny, 0.3, 0.4).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let gts: Vec<BBox> = (0..rng.gen_range(0..5)).map(|_| rand_box(&mut rng, 64.0)).collect();
        assert_eq!(
            match_anchors(&anchors, &gts, 0.5, 0.4).unwrap(),
            reference_match(&anchors, &gts, 0.5, 0.4)
        );
    }
}

fn reference_nms(dets: &[Detection], thr: f64, score: f64, max_out: usize) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let idx: Vec<usize> = idx.into_iter().filter(|&i| dets[i].score >= score).collect();
    let mut dead = vec![false; idx.len()];
    let mut out = Vec::new();
    for p in 0..idx.len() {
        if dead[p] {
            continue;
        }
        out.push(dets[idx[p]]);
        for q in p + 1..idx.len() {
            let (a, b) = (&dets[idx[p]], &dets[idx[q]]);
            if a.class == b.class && iou(&a.bbox, &b.bbox) > thr {
                dead[q] = true;
            }
        }
    }
    out.truncate(max_out);
    out
}

#[test]
fn nms_examples_and_reference() {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0);
    assert_eq!(nms(&[det(0, 0.3, b)], 0.5, 0.0, 10), vec![det(0, 0.3, b)]);
    assert_eq!(nms(&[det(0, 0.8, b), det(0, 0.9, b)], 0.5, 0.0, 10), vec![det(0, 0.9, b)]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let dets: Vec<Detection> = (0..rng.gen_range(0..40))
            .map(|_| det(rng.gen_range(0..3), (rng.gen_range(0..20) as f64) / 20.0, rand_box(&mut rng, 50.0)))
            .collect();
        let max_out = rng.gen_range(1..30);
        assert_eq!(nms(&dets, 0.45, 0.2, max_out), reference_nms(&dets, 0.45, 0.2, max_out));
    }
}

#[test]
fn map_fixtures() {
    let g = |x: f64| (0u32, BBox::new(x, 0.0, 10.0, 10.0));
    let gts = vec![vec![g(0.0), g(20.0), g(40.0)]];
    let perfect: Vec<Vec<Detection>> = gts.iter().map(|s| s.iter().map(|&(c, b)| det(c, 1.0, b)).collect()).collect();
    let r = evaluate_map(&perfect, &gts, &coco_thresholds()).unwrap();
    assert_eq!((r.map_50, r.map_50_95), (1.0, 1.0));
    let none = evaluate_map(&[vec![]], &gts, &coco_thresholds()).unwrap();
    assert_eq!((none.map_50, none.map_50_95), (0.0, 0.0));

    // TP 0.9, FP 0.8, TP 0.7, TP 0.6 against 3 GTs: precision 1 up to recall
    // 1/3 (points 0.00..0.33), then 0.75 up to recall 1 (67 points)
    let far = BBox::new(100.0, 100.0, 10.0, 10.0);
    let dets = vec![vec![det(0, 0.9, gts[0][0].1), det(0, 0.8, far), det(0, 0.7, gts[0][1].1), det(0, 0.6, gts[0][2].1)]];
    let r = evaluate_map(&dets, &gts, &[0.5]).unwrap();
    assert!((r.map_50 - (34.0 + 67.0 * 0.75) / 101.0).abs() < 1e-12);
}

#[test]
fn detection_dump_round_trip() {
    let rows = vec![
        ("s0".to_string(), det(1, 0.25, BBox::new(1.5, 2.0, 3.0, 4.125))),
        ("s1".to_string(), det(0, 0.75, BBox::new(0.0, 0.0, 22.0, 22.0))),
    ];
    let mut buf = Vec::new();
    write_detections(&mut buf, &rows).unwrap();
    assert_eq!(parse_detections(buf.as_slice()).unwrap(), rows);
    assert!(parse_detections("a 1 2".as_bytes()).is_err());
}

fn toy_detector(mode: FusionMode, seed: u64) -> (ParamStore, Detector) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = build_detector(&mut store, &DetectorConfig::toy(4, mode), &HeadConfig::toy(2), &mut rng).unwrap();
    (store, d)
}

fn spiky_input(steps: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = steps * n * 4 * 64 * 64;
    let d = (0..len).map(|_| if rng.gen_bool(0.1) { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(&[steps * n, 4, 64, 64], d).unwrap()
}

#[test]
fn head_shapes_match_anchor_count() {
    for mode in [FusionMode::None, FusionMode::Three] {
        let (mut store, mut d) = toy_detector(mode, 5);
        let anchors = d.anchors.len();
        let mut ctx = Ctx::new(&mut store, 2, false);
        let x = ctx.graph.input(spiky_input(2, 3, 6));
        let (c, b) = d.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.graph.shape(c), &[3, anchors, 2]);
        assert_eq!(ctx.graph.shape(b), &[3, anchors, 4]);
    }
}

#[test]
fn zero_head_predicts_zero() {
    let (mut store, mut d) = toy_detector(FusionMode::Three, 7);
    for conv in d.head.cls.iter().chain(&d.head.reg) {
        for id in [Some(conv.weight), conv.bias].into_iter().flatten() {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(&shape);
        }
    }
    let mut ctx = Ctx::new(&mut store, 2, false);
    let x = ctx.graph.input(spiky_input(2, 1, 8));
    let (c, b) = d.forward(&mut ctx, x).unwrap();
    assert!(ctx.graph.value(c).data().iter().chain(ctx.graph.value(b).data()).all(|&v| v == 0.0));
}

#[test]
fn head_level_mismatch_rejected() {
    let (mut store, d) = toy_detector(FusionMode::None, 9);
    let mut ctx = Ctx::new(&mut store, 1, false);
    let x = ctx.graph.input(Tensor::zeros(&[1, 16, 16, 16]));
    assert!(d.head.forward(&mut ctx, &[x]).is_err());
}

#[test]
fn multibox_loss_reaches_backbone() {
    let (mut store, mut d) = toy_detector(FusionMode::Three, 10);
    let gts = vec![vec![(1u32, BBox::new(10.0, 12.0, 24.0, 24.0))]];
    let targets = d.targets(&gts).unwrap();
    assert!(targets.num_pos >= 1);
    let mut ctx = Ctx::new(&mut store, 3, true);
    let x = ctx.graph.input(spiky_input(3, 1, 11));
    let (c, b) = d.forward(&mut ctx, x).unwrap();
    let loss = ssd_multibox_loss(&mut ctx.graph, c, b, &targets, FocalParams::default(), 1.0).unwrap();
    ctx.backward(loss.total).unwrap();
    let backbone_grad: f64 = store
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("backbone") && e.trainable)
        .map(|e| e.grad.data().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    assert!(backbone_grad > 0.0);
}

#[test]
fn classification_bias_is_prior() {
    let (store, d) = toy_detector(FusionMode::None, 12);
    let b = store.value(d.head.cls[0].bias.unwrap());
    assert!(b.data().iter().all(|&v| (v + 99f64.ln()).abs() < 1e-12));
}

#[test]
fn postprocess_recovers_encoded_box() {
    let anchors = vec![BBox::new(0.0, 0.0, 20.0, 20.0), BBox::new(30.0, 30.0, 20.0, 20.0)];
    let gt = BBox::new(32.0, 31.0, 18.0, 22.0);
    let off = encode_box(&gt, &anchors[1]).unwrap();
    let cls = Tensor::from_vec(&[1, 2, 1], vec![-10.0, 5.0]).unwrap();
    let mut bx = vec![0.0; 8];
    bx[4..].copy_from_slice(&off);
    let boxes = Tensor::from_vec(&[1, 2, 4], bx).unwrap();
    let out = postprocess(&cls, &boxes, &anchors, (64, 64), &PostProcess::default()).unwrap();
    assert_eq!(out[0].len(), 1);
    assert!((out[0][0].bbox.x - gt.x).abs() < 1e-9 && (out[0][0].bbox.h - gt.h).abs() < 1e-9);
    let _ = Graph::new();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nms_survivors_are_sorted_and_separated(seed in 0u64..5000, count in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets: Vec<Detection> = (0..count)
            .map(|_| det(rng.gen_range(0..2), rng.gen_range(0.0..1.0), rand_box(&mut rng, 40.0)))
            .collect();
        let out = nms(&dets, 0.5, 0.1, 100);
        for w in out.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) <= 0.5);
            }
        }
    }

    #[test]
    fn map_never_drops_when_an_unmatched_gt_is_found(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gts: Vec<Vec<(u32, BBox)>> = (0..3)
            .map(|_| (0..rng.gen_range(1..4)).map(|_| (rng.gen_range(0..2), rand_box(&mut rng, 60.0))).collect())
            .collect();
        let mut dets: Vec<Vec<Detection>> = gts
            .iter()
            .map(|s| {
                s.iter()
                    .skip(1)
                    .map(|&(c, b)| det(c, rng.gen_range(0.0..1.0), BBox::new(b.x + rng.gen_range(-3.0..3.0), b.y, b.w, b.h)))
                    .collect()
            })
            .collect();
        let before = evaluate_map(&dets, &gts, &coco_thresholds()).unwrap();
        let (c, b) = gts[0][0];
        dets[0].push(det(c, rng.gen_range(0.0..1.0), b));
        let after = evaluate_map(&dets, &gts, &coco_thresholds()).unwrap();
        prop_assert!(after.map_50 >= before.map_50 - 1e-12);
        prop_assert!(after.map_50_95 >= before.map_50_95 - 1e-12);
    }
}
