use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{build_dataset, flip_sample, Dataset, Sample, Split};
use super::optim::{clip_store_grads, cosine_lr, AdamW, AdamWParams};
use crate::decode::{argmax, Decode};
use crate::detect::{build_detector, coco_thresholds, evaluate_map, Detection, Detector, HeadConfig, MapReport, PostProcess};
use crate::error::{Error, Result};
use crate::events::stack_time_major;
use crate::losses::{class_loss, one_hot, ssd_multibox_loss, FocalParams};
use crate::metrics::firing_rate;
use crate::nn::{Ctx, ParamStore};
use crate::snn::{build_classifier, Classifier, ClassifierConfig, DetectorConfig, FusionSpec, Neurons};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Test accuracy or mAP@0.5 on evaluation epochs.
    pub metric: Option<f64>,
    pub firing_rate: f64,
    pub non_binary_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub accuracy: Option<f64>,
    pub map_50: Option<f64>,
    pub map_50_95: Option<f64>,
    pub firing_rate: f64,
    pub non_binary_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    /// Seconds; kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub wall_clock: f64,
}

impl RunReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "metric", "firing_rate", "non_binary_rate"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.metric.map_or(String::new(), |m| m.to_string()),
                e.firing_rate.to_string(),
                e.non_binary_rate.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Trained parameters, the network and its report.
pub struct Trained<M> {
    pub store: ParamStore,
    pub model: M,
    pub report: RunReport,
}

pub fn classifier_config(cfg: &TrainConfig) -> ClassifierConfig {
    ClassifierConfig::toy(2 * cfg.data.micro_bins, cfg.model.classes)
}

pub fn detector_configs(cfg: &TrainConfig) -> (DetectorConfig, HeadConfig) {
    let mut det = DetectorConfig::toy(2 * cfg.data.micro_bins, cfg.model.fusion);
    det.input_hw = (cfg.data.height as usize, cfg.data.width as usize);
    det.fusion = FusionSpec {
        spes_variant: cfg.model.spes,
        ..det.fusion
    };
    let mut head = HeadConfig::toy(cfg.model.classes);
    head.decode = cfg.decode;
    (det, head)
}

pub fn build_classifier_model(cfg: &TrainConfig) -> Result<(ParamStore, Classifier)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = build_classifier(&mut store, &classifier_config(cfg), &mut rng)?;
    Ok((store, model))
}

pub fn build_detector_model(cfg: &TrainConfig) -> Result<(ParamStore, Detector)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (det, head) = detector_configs(cfg);
    let model = build_detector(&mut store, &det, &head, &mut rng)?;
    Ok((store, model))
}

fn batch_input(samples: &[&Sample]) -> Result<Tensor> {
    let cubes: Vec<_> = samples.iter().map(|s| &s.cube).collect();
    stack_time_major(&cubes)
}

/// Decoded class scores `[N, K]` for a batch.
pub fn classifier_scores(model: &mut Classifier, ctx: &mut Ctx, x: &Tensor, decode: Decode) -> Result<crate::autograd::Var> {
    let v = ctx.graph.input(x.clone());
    let out = model.forward(ctx, v)?;
    let steps = ctx.steps;
    match decode {
        Decode::Membrane => ctx.graph.decode(decode, out.currents, steps),
        _ => ctx.graph.decode(decode, out.spikes, steps),
    }
}

pub fn eval_classifier(model: &mut Classifier, store: &mut ParamStore, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let mut correct = 0;
    for chunk in data.samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = batch_input(&refs)?;
        model.reset_membranes();
        let mut ctx = Ctx::new(store, cfg.data.t_bins, false);
        let scores = classifier_scores(model, &mut ctx, &x, cfg.decode)?;
        let s = ctx.graph.value(scores);
        let k = s.shape()[1];
        for (i, smp) in chunk.iter().enumerate() {
            correct += usize::from(argmax(&s.data()[i * k..(i + 1) * k]) == smp.label as usize);
        }
    }
    Ok(correct as f64 / data.samples.len() as f64)
}

/// Post-processed detections for every sample of a dataset.
pub fn detect_all(model: &mut Detector, store: &mut ParamStore, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<Vec<Detection>>> {
    let mut out = Vec::new();
    let hw = (cfg.data.height as usize, cfg.data.width as usize);
    for chunk in data.samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = batch_input(&refs)?;
        model.reset_membranes();
        let mut ctx = Ctx::new(store, cfg.data.t_bins, false);
        let v = ctx.graph.input(x);
        let (c, b) = model.forward(&mut ctx, v)?;
        let dets = model.postprocess(ctx.graph.value(c), ctx.graph.value(b), hw, &PostProcess::default())?;
        out.extend(dets);
    }
    Ok(out)
}

pub fn eval_detector(model: &mut Detector, store: &mut ParamStore, data: &Dataset, cfg: &TrainConfig) -> Result<MapReport> {
    let dets = detect_all(model, store, data, cfg)?;
    let gts: Vec<Vec<_>> = data.samples.iter().map(|s| s.boxes.clone()).collect();
    evaluate_map(&dets, &gts, &coco_thresholds())
}

fn adamw_params(cfg: &TrainConfig) -> AdamWParams {
    AdamWParams {
        weight_decay: cfg.weight_decay,
        ..AdamWParams::default()
    }
}

/// Independent streams for shuffling and augmentation draws.
fn loop_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut root = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7a11));
    (ChaCha8Rng::seed_from_u64(root.gen()), ChaCha8Rng::seed_from_u64(root.gen()))
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, step })
    }
}

/// Shared epoch driver: `step` runs one optimisation step on a batch and
/// returns its loss; `eval` scores the model on the test split.
struct Loop<'a> {
    cfg: &'a TrainConfig,
    train: Dataset,
}

impl Loop<'_> {
    fn batches(&self, shuffle: &mut ChaCha8Rng, flips: &mut ChaCha8Rng) -> Vec<Vec<Sample>> {
        let mut order: Vec<usize> = (0..self.train.samples.len()).collect();
        order.shuffle(shuffle);
        order
            .chunks(self.cfg.batch_size)
            .map(|c| {
                c.iter()
                    .map(|&i| {
                        let s = &self.train.samples[i];
                        if self.cfg.flip_prob > 0.0 && flips.gen::<f64>() < self.cfg.flip_prob {
                            flip_sample(s)
                        } else {
                            s.clone()
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn train_classifier(cfg: &TrainConfig) -> Result<Trained<Classifier>> {
    cfg.validate()?;
    let start = Instant::now();
    let train = build_dataset(&cfg.data, cfg.seed, Split::Train, cfg.data.train_samples)?;
    let test = build_dataset(&cfg.data, cfg.seed, Split::Test, cfg.data.test_samples.max(1))?;
    let (mut store, mut model) = build_classifier_model(cfg)?;
    let mut opt = AdamW::new(&store, adamw_params(cfg));
    let (mut shuffle, mut flips) = loop_rngs(cfg.seed);
    let lp = Loop { cfg, train };
    let per_epoch = lp.train.samples.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut step = 0;
    let mut epochs = Vec::new();
    let mut accuracy = 0.0;
    for epoch in 0..cfg.epochs {
        model.reset_state();
        let mut loss_sum = 0.0;
        let batches = lp.batches(&mut shuffle, &mut flips);
        for batch in &batches {
            let refs: Vec<&Sample> = batch.iter().collect();
            let x = batch_input(&refs)?;
            let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
            let y = one_hot(&labels, cfg.model.classes)?;
            model.reset_membranes();
            store.zero_grad();
            let mut ctx = Ctx::new(&mut store, cfg.data.t_bins, true);
            let scores = classifier_scores(&mut model, &mut ctx, &x, cfg.decode)?;
            let loss = class_loss(&mut ctx.graph, cfg.loss, scores, &y)?;
            let lv = ctx.graph.value(loss).data()[0];
            check_finite(lv, epoch, step)?;
            ctx.backward(loss)?;
            drop(ctx);
            clip_store_grads(&mut store, cfg.grad_clip);
            opt.step(&mut store, cosine_lr(step, total, cfg.lr, cfg.lr_min))?;
            loss_sum += lv;
            step += 1;
        }
        let fr = firing_rate(&model)?.overall;
        let last = epoch + 1 == cfg.epochs;
        let metric = if last || (epoch + 1) % cfg.eval_every == 0 {
            accuracy = eval_classifier(&mut model, &mut store, &test, cfg)?;
            Some(accuracy)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.len() as f64,
            metric,
            firing_rate: fr,
            non_binary_rate: 0.0,
        });
    }
    let final_fr = epochs.last().map_or(0.0, |e| e.firing_rate);
    let report = RunReport {
        task: "classification".into(),
        config: cfg.clone(),
        epochs,
        final_metrics: FinalMetrics {
            accuracy: Some(accuracy),
            map_50: None,
            map_50_95: None,
            firing_rate: final_fr,
            non_binary_rate: 0.0,
        },
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok(Trained { store, model, report })
}

pub fn train_detector(cfg: &TrainConfig) -> Result<Trained<Detector>> {
    cfg.validate()?;
    let start = Instant::now();
    let train = build_dataset(&cfg.data, cfg.seed, Split::Train, cfg.data.train_samples)?;
    let test = build_dataset(&cfg.data, cfg.seed, Split::Test, cfg.data.test_samples.max(1))?;
    let (mut store, mut model) = build_detector_model(cfg)?;
    let mut opt = AdamW::new(&store, adamw_params(cfg));
    let (mut shuffle, mut flips) = loop_rngs(cfg.seed);
    let lp = Loop { cfg, train };
    let per_epoch = lp.train.samples.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut step = 0;
    let mut epochs = Vec::new();
    let mut last_map = MapReport {
        map_50: 0.0,
        map_50_95: 0.0,
        per_class: Default::default(),
    };
    for epoch in 0..cfg.epochs {
        model.backbone.reset_all();
        let mut loss_sum = 0.0;
        let batches = lp.batches(&mut shuffle, &mut flips);
        for batch in &batches {
            let refs: Vec<&Sample> = batch.iter().collect();
            let x = batch_input(&refs)?;
            let gts: Vec<Vec<_>> = batch.iter().map(|s| s.boxes.clone()).collect();
            let targets = model.targets(&gts)?;
            model.reset_membranes();
            store.zero_grad();
            let mut ctx = Ctx::new(&mut store, cfg.data.t_bins, true);
            let v = ctx.graph.input(x);
            let (c, b) = model.forward(&mut ctx, v)?;
            let loss = ssd_multibox_loss(&mut ctx.graph, c, b, &targets, FocalParams::default(), 1.0)?;
            let lv = ctx.graph.value(loss.total).data()[0];
            check_finite(lv, epoch, step)?;
            ctx.backward(loss.total)?;
            drop(ctx);
            clip_store_grads(&mut store, cfg.grad_clip);
            opt.step(&mut store, cosine_lr(step, total, cfg.lr, cfg.lr_min))?;
            loss_sum += lv;
            step += 1;
        }
        let fr = firing_rate(&model)?.overall;
        let nb = model.backbone.non_binary().rate().unwrap_or(0.0);
        let last = epoch + 1 == cfg.epochs;
        let metric = if last || (epoch + 1) % cfg.eval_every == 0 {
            last_map = eval_detector(&mut model, &mut store, &test, cfg)?;
            Some(last_map.map_50)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.len() as f64,
            metric,
            firing_rate: fr,
            non_binary_rate: nb,
        });
    }
    let (fr, nb) = epochs.last().map_or((0.0, 0.0), |e| (e.firing_rate, e.non_binary_rate));
    let report = RunReport {
        task: "detection".into(),
        config: cfg.clone(),
        epochs,
        final_metrics: FinalMetrics {
            accuracy: None,
            map_50: Some(last_map.map_50),
            map_50_95: Some(last_map.map_50_95),
            firing_rate: fr,
            non_binary_rate: nb,
        },
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok(Trained { store, model, report })
}
