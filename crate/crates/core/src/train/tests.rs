use super::*;
use crate::decode::Decode;
use crate::error::Error;
use crate::events::Scenario;

fn tiny_classification() -> TrainConfig {
    let mut cfg = TrainConfig::toy_classification();
    cfg.epochs = 2;
    cfg.data.train_samples = 24;
    cfg.data.test_samples = 8;
    cfg
}

fn tiny_detection() -> TrainConfig {
    let mut cfg = TrainConfig::toy_detection();
    cfg.epochs = 3;
    cfg.eval_every = 3;
    cfg.data.train_samples = 16;
    cfg.data.test_samples = 4;
    cfg
}

fn json(r: &RunReport) -> String {
    serde_json::to_string(r).unwrap()
}

#[test]
fn classifier_runs_are_deterministic() {
    let cfg = tiny_classification();
    let a = train_classifier(&cfg).unwrap();
    let b = train_classifier(&cfg).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
    for (x, y) in a.store.entries().iter().zip(b.store.entries()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn detector_runs_are_deterministic_without_augmentation() {
    let mut cfg = tiny_detection();
    cfg.epochs = 1;
    cfg.flip_prob = 0.0;
    let a = train_detector(&cfg).unwrap();
    let b = train_detector(&cfg).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
}

#[test]
fn separable_bars_reach_high_accuracy() {
    let mut cfg = TrainConfig::toy_classification();
    cfg.data.noise = 0.5;
    let t = train_classifier(&cfg).unwrap();
    let acc = t.report.final_metrics.accuracy.unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    let fr = t.report.final_metrics.firing_rate;
    assert!((0.0..=1.0).contains(&fr));
}

#[test]
fn detector_loss_decreases() {
    let t = train_detector(&tiny_detection()).unwrap();
    let losses: Vec<f64> = t.report.epochs.iter().map(|e| e.loss).collect();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    let m = &t.report.final_metrics;
    assert!(m.map_50.is_some() && m.accuracy.is_none());
    assert!((0.0..=1.0).contains(&m.non_binary_rate));
}

#[test]
fn runaway_learning_rate_diverges() {
    let mut cfg = tiny_classification();
    cfg.decode = Decode::Membrane;
    cfg.lr = 1e300;
    cfg.grad_clip = 1e300;
    match train_classifier(&cfg) {
        Err(Error::Divergence { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(t) => panic!("no divergence: {:?}", t.report.final_metrics),
    }
}

#[test]
fn csv_has_one_row_per_epoch() {
    let t = train_classifier(&tiny_classification()).unwrap();
    let mut buf = Vec::new();
    t.report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,metric,firing_rate,non_binary_rate");
    assert_eq!(lines.len(), 1 + t.report.epochs.len());
}

#[test]
fn datasets_are_seeded_and_splits_differ() {
    let spec = tiny_classification().data;
    let a = build_dataset(&spec, 3, Split::Train, 6).unwrap();
    let b = build_dataset(&spec, 3, Split::Train, 6).unwrap();
    let c = build_dataset(&spec, 3, Split::Test, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples[0].cube, c.samples[0].cube);
    let labels: Vec<u32> = a.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);
}

#[test]
fn detection_boxes_pass_the_size_filter() {
    let spec = tiny_detection().data;
    let d = build_dataset(&spec, 1, Split::Train, 12).unwrap();
    assert!(d.samples.iter().any(|s| !s.boxes.is_empty()));
    for s in &d.samples {
        for (_, b) in &s.boxes {
            assert!(b.w >= MIN_BOX_SIDE && b.h >= MIN_BOX_SIDE);
            assert!(b.w.hypot(b.h) >= MIN_BOX_DIAG);
            assert!(b.x >= 0.0 && b.x + b.w <= spec.width as f64 + 1e-9);
        }
    }
}

#[test]
fn flip_is_an_involution() {
    let spec = tiny_detection().data;
    let d = build_dataset(&spec, 2, Split::Train, 4).unwrap();
    for s in &d.samples {
        let back = flip_sample(&flip_sample(s));
        assert_eq!(back.cube, s.cube);
        for ((_, a), (_, b)) in back.boxes.iter().zip(&s.boxes) {
            assert!((a.x - b.x).abs() < 1e-9 && a.w == b.w);
        }
    }
}

#[test]
fn static_noise_has_no_boxes() {
    let mut spec = tiny_detection().data;
    spec.scenario = Scenario::StaticNoise;
    let d = build_dataset(&spec, 0, Split::Test, 3).unwrap();
    assert!(d.samples.iter().all(|s| s.boxes.is_empty()));
}
