//! Command-line front end. JSON goes to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad flags or config, 3 I/O or
//! file format failure, 4 non-finite loss, 5 checkpoint mismatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detect::{write_detections, BBox};
use crate::error::{Error, Result};
use crate::events::{
    encode_voxel_cube, generate_with, read_event_file, read_gt_file, resize_stream_nearest, write_event_file,
    write_gt_file, Scenario,
};
use crate::metrics::{firing_rate, profile_report};
use crate::nn::Ctx;
use crate::snn::{checkpoint, Neurons};
use crate::train::{
    build_classifier_model, build_dataset, build_detector_model, classifier_scores, detect_all, eval_classifier,
    eval_detector, final_boxes, sample_seed, synth_config, train_classifier, train_detector, Dataset, RunReport, Sample,
    Split, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "spikedet", version, about = "Event-camera spiking detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic event files, ground-truth sidecars and a manifest.
    Generate(GenerateArgs),
    /// Encode an event file into a voxel cube.
    Encode(EncodeArgs),
    /// Train the toy classifier.
    TrainCls(TrainArgs),
    /// Train the toy detector.
    TrainDet(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Operation counts, firing rates and energy of a checkpoint.
    Profile(ProfileArgs),
    /// Run a grid of training configurations over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Microseconds.
    #[arg(long, default_value_t = 100_000)]
    pub duration: u64,
    #[arg(long, default_value_t = 64)]
    pub width: u16,
    #[arg(long, default_value_t = 64)]
    pub height: u16,
    /// Events per microsecond.
    #[arg(long, default_value_t = 0.02)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub t_bins: usize,
    #[arg(long, default_value_t = 2)]
    pub micro_bins: usize,
    #[arg(long)]
    pub t_start: Option<u64>,
    #[arg(long)]
    pub t_end: Option<u64>,
    /// Include the flattened counts in the output.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// TOML configuration; defaults to the built-in toy setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for the checkpoint, report and per-epoch CSV.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory written by `generate`; defaults to the checkpoint's test split.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Score the regenerated training split instead of the test split.
    #[arg(long)]
    pub train_split: bool,
    /// Extra IoU threshold reported alongside mAP@0.5 and mAP@0.5:0.95.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Write detections as `sample_id class score x y w h` lines.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Samples in the profiled batch.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma-separated axes: `decode,loss` or `fusion`.
    #[arg(long)]
    pub axis: String,
    /// Detection or classification; inferred from the axis when omitted.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub count: usize,
    pub width: u16,
    pub height: u16,
    pub duration: u64,
    pub rate: f64,
    pub noise: f64,
    pub samples: Vec<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Parse(_)
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::Truncated(_)
        | Error::UnsortedTimestamps { .. }
        | Error::EventOutOfBounds { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::CheckpointMismatch(_) => 5,
        _ => 1,
    }
}

/// Parse arguments, run, print JSON to `out` and diagnostics to `err`;
/// returns the process exit code.
pub fn run<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let threads = crate::par::init_from_env();
    let _ = writeln!(err, "spikedet: {threads} worker thread(s)");
    match dispatch(cli.command, err) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("json value");
            if writeln!(out, "{text}").is_err() {
                return 3;
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    run(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn dispatch<E: Write>(cmd: Command, err: &mut E) -> Result<Value> {
    match cmd {
        Command::Generate(a) => cmd_generate(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::TrainCls(a) => cmd_train(&a, false, err),
        Command::TrainDet(a) => cmd_train(&a, true, err),
        Command::Eval(a) => cmd_eval(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::Ablate(a) => cmd_ablate(&a, err),
    }
}

fn sample_name(i: usize) -> String {
    format!("sample_{i:05}")
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Value> {
    std::fs::create_dir_all(&a.out_dir)?;
    let spec = crate::train::DataSpec {
        scenario: a.scenario,
        train_samples: a.count,
        test_samples: 0,
        width: a.width,
        height: a.height,
        duration: a.duration,
        rate: a.rate,
        noise: a.noise,
        t_bins: 1,
        micro_bins: 1,
    };
    let mut names = Vec::new();
    let mut events = 0;
    for i in 0..a.count {
        let mut cfg = synth_config(&spec, sample_seed(a.seed, Split::Train, i));
        if !a.scenario.is_detection() {
            cfg.class = Some((i % 2) as u32);
        }
        let (stream, gt) = generate_with(&cfg)?;
        let name = sample_name(i);
        write_event_file(&stream, &a.out_dir.join(format!("{name}.evt")))?;
        write_gt_file(&gt, &a.out_dir.join(format!("{name}.gt")))?;
        events += stream.len();
        names.push(name);
    }
    let manifest = DatasetManifest {
        scenario: a.scenario,
        seed: a.seed,
        count: a.count,
        width: a.width,
        height: a.height,
        duration: a.duration,
        rate: a.rate,
        noise: a.noise,
        samples: names,
    };
    std::fs::write(a.out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(json!({ "manifest": manifest, "events": events }))
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<Value> {
    let s = read_event_file(&a.input)?;
    let ta = a.t_start.unwrap_or(0);
    let tb = a.t_end.unwrap_or(s.duration);
    let cube = encode_voxel_cube(&s, ta, tb, a.t_bins, a.micro_bins)?;
    let mut v = json!({
        "shape": cube.shape(),
        "window": [ta, tb],
        "events_in_window": cube.total(),
        "nonzero_voxels": cube.data.iter().filter(|&&c| c > 0).count(),
    });
    if a.full {
        v["data"] = json!(cube.data);
    }
    Ok(v)
}

fn load_config(a: &ConfigArgs, detection: bool) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None if detection => TrainConfig::toy_detection(),
        None => TrainConfig::toy_classification(),
    };
    cfg.apply_overrides(&a.sets)?;
    Ok(cfg)
}

fn manifest_for(task: &str, cfg: &TrainConfig) -> Value {
    json!({ "task": task, "config": cfg })
}

fn log_report<E: Write>(err: &mut E, r: &RunReport) {
    for e in &r.epochs {
        let m = e.metric.map_or("-".to_string(), |m| format!("{m:.4}"));
        let _ = writeln!(err, "epoch {:>3}  loss {:.5}  metric {m}  fr {:.4}", e.epoch, e.loss, e.firing_rate);
    }
    let _ = writeln!(err, "wall clock {:.1} s", r.wall_clock);
}

fn cmd_train<E: Write>(a: &TrainArgs, detection: bool, err: &mut E) -> Result<Value> {
    let cfg = load_config(&a.config, detection)?;
    let (report, store, task) = if detection {
        let t = train_detector(&cfg)?;
        (t.report, t.store, "detection")
    } else {
        let t = train_classifier(&cfg)?;
        (t.report, t.store, "classification")
    };
    log_report(err, &report);
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&dir.join("model.ckpt"), &manifest_for(task, &cfg), &store)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        report.save_csv(&dir.join("epochs.csv"))?;
    }
    Ok(serde_json::to_value(&report)?)
}

struct Loaded {
    task: String,
    config: TrainConfig,
    ckpt: checkpoint::Checkpoint,
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ckpt = checkpoint::load(path)?;
    let task = ckpt.manifest["task"]
        .as_str()
        .ok_or_else(|| Error::CheckpointMismatch("manifest has no task".into()))?
        .to_string();
    let config: TrainConfig = serde_json::from_value(ckpt.manifest["config"].clone())
        .map_err(|e| Error::CheckpointMismatch(format!("manifest config: {e}")))?;
    Ok(Loaded { task, config, ckpt })
}

/// Read a directory written by `generate`, resized and encoded per `cfg`.
pub fn load_dataset_dir(dir: &Path, cfg: &TrainConfig) -> Result<(Dataset, Vec<String>)> {
    let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let d = &cfg.data;
    let mut samples = Vec::new();
    for name in &m.samples {
        let s = read_event_file(&dir.join(format!("{name}.evt")))?;
        let gt = read_gt_file(&dir.join(format!("{name}.gt")))?;
        let (sx, sy) = (d.width as f64 / s.width as f64, d.height as f64 / s.height as f64);
        let s = resize_stream_nearest(&s, d.width, d.height)?;
        let cube = encode_voxel_cube(&s, 0, s.duration, d.t_bins, d.micro_bins)?;
        let label = match &gt {
            crate::events::GroundTruth::Class(c) => *c,
            _ => 0,
        };
        let boxes = final_boxes(&gt, m.width as f64, m.height as f64)
            .into_iter()
            .map(|(c, b)| (c, BBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy)))
            .collect();
        samples.push(Sample { cube, label, boxes });
    }
    Ok((Dataset { samples }, m.samples))
}

fn eval_data(dataset: &Option<PathBuf>, train_split: bool, cfg: &TrainConfig) -> Result<(Dataset, Vec<String>)> {
    match dataset {
        Some(dir) => load_dataset_dir(dir, cfg),
        None => {
            let (split, n) = if train_split {
                (Split::Train, cfg.data.train_samples)
            } else {
                (Split::Test, cfg.data.test_samples.max(1))
            };
            let ds = build_dataset(&cfg.data, cfg.seed, split, n)?;
            let names = (0..n).map(sample_name).collect();
            Ok((ds, names))
        }
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    let l = load_checkpoint(&a.checkpoint)?;
    let cfg = &l.config;
    let (data, names) = eval_data(&a.dataset, a.train_split, cfg)?;
    match l.task.as_str() {
        "classification" => {
            let (mut store, mut model) = build_classifier_model(cfg)?;
            l.ckpt.apply(&mut store)?;
            let acc = eval_classifier(&mut model, &mut store, &data, cfg)?;
            Ok(json!({ "task": l.task, "samples": data.samples.len(), "accuracy": acc }))
        }
        "detection" => {
            let (mut store, mut model) = build_detector_model(cfg)?;
            l.ckpt.apply(&mut store)?;
            let r = eval_detector(&mut model, &mut store, &data, cfg)?;
            let mut v = json!({
                "task": l.task,
                "samples": data.samples.len(),
                "map_50": r.map_50,
                "map_50_95": r.map_50_95,
                "per_class": r.per_class,
            });
            if a.iou.is_some() || a.dump.is_some() {
                let dets = detect_all(&mut model, &mut store, &data, cfg)?;
                if let Some(t) = a.iou {
                    let gts: Vec<Vec<_>> = data.samples.iter().map(|s| s.boxes.clone()).collect();
                    v["map_at_iou"] = json!({ "iou": t, "map": crate::detect::evaluate_map(&dets, &gts, &[t])?.map_50_95 });
                }
                if let Some(p) = &a.dump {
                    let rows: Vec<_> = names
                        .iter()
                        .zip(&dets)
                        .flat_map(|(n, ds)| ds.iter().map(move |d| (n.clone(), *d)))
                        .collect();
                    write_detections(std::fs::File::create(p)?, &rows)?;
                }
            }
            Ok(v)
        }
        other => Err(Error::CheckpointMismatch(format!("unknown task {other:?}"))),
    }
}

fn cmd_profile(a: &ProfileArgs) -> Result<Value> {
    if a.samples == 0 {
        return Err(Error::Config("profile needs at least one sample".into()));
    }
    let l = load_checkpoint(&a.checkpoint)?;
    let cfg = &l.config;
    let (data, _) = eval_data(&a.dataset, false, cfg)?;
    let n = a.samples.min(data.samples.len());
    let cubes: Vec<_> = data.samples[..n].iter().map(|s| &s.cube).collect();
    let x = crate::events::stack_time_major(&cubes)?;
    let steps = cfg.data.t_bins;
    let (records, firing) = match l.task.as_str() {
        "classification" => {
            let (mut store, mut model) = build_classifier_model(cfg)?;
            l.ckpt.apply(&mut store)?;
            model.reset_state();
            let mut ctx = Ctx::new(&mut store, steps, false);
            ctx.enable_profile();
            classifier_scores(&mut model, &mut ctx, &x, cfg.decode)?;
            (ctx.take_profile(), firing_rate(&model)?)
        }
        "detection" => {
            let (mut store, mut model) = build_detector_model(cfg)?;
            l.ckpt.apply(&mut store)?;
            model.backbone.reset_all();
            let mut ctx = Ctx::new(&mut store, steps, false);
            ctx.enable_profile();
            let v = ctx.graph.input(x);
            model.forward(&mut ctx, v)?;
            (ctx.take_profile(), firing_rate(&model)?)
        }
        other => return Err(Error::CheckpointMismatch(format!("unknown task {other:?}"))),
    };
    let report = profile_report(&records, steps, n, firing)?;
    Ok(json!({ "task": l.task, "samples": n, "profile": report }))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn cmd_ablate<E: Write>(a: &AblateArgs, err: &mut E) -> Result<Value> {
    let mut axes: Vec<&str> = a.axis.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    axes.sort_unstable();
    axes.dedup();
    if a.seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one seed".into()));
    }
    let detection = match a.task.as_deref() {
        Some("detection" | "det") => true,
        Some("classification" | "cls") => false,
        Some(t) => return Err(Error::Config(format!("unknown task {t:?}"))),
        None => axes.contains(&"fusion"),
    };
    let mut cells: Vec<Vec<(String, String)>> = vec![vec![]];
    for axis in &axes {
        let values: &[&str] = match *axis {
            "decode" => &["count", "rate", "membrane"],
            "loss" => &["mse", "ce"],
            "fusion" => &["none", "3", "4"],
            other => return Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        };
        let values: Vec<&str> = if *axis == "decode" && axes.contains(&"loss") {
            vec!["count", "rate"]
        } else {
            values.to_vec()
        };
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.to_string(), v.to_string()));
                    c
                })
            })
            .collect();
    }
    let base = load_config(&a.config, detection)?;
    let mut rows = Vec::new();
    for cell in cells {
        let mut runs = Vec::new();
        for &seed in &a.seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            for (k, v) in &cell {
                cfg.set(k, v)?;
            }
            let r = if detection {
                train_detector(&cfg)?.report
            } else {
                train_classifier(&cfg)?.report
            };
            let _ = writeln!(err, "{cell:?} seed {seed}: {:?} ({:.1} s)", r.final_metrics, r.wall_clock);
            runs.push(r);
        }
        let metric: Vec<f64> = runs
            .iter()
            .map(|r| r.final_metrics.accuracy.or(r.final_metrics.map_50).unwrap_or(0.0))
            .collect();
        let fr: Vec<f64> = runs.iter().map(|r| r.final_metrics.firing_rate).collect();
        let settings: serde_json::Map<String, Value> = cell.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        rows.push(json!({
            "settings": settings,
            "seeds": a.seeds,
            "metric": if detection { "map_50" } else { "accuracy" },
            "per_seed": metric,
            "mean": mean(&metric),
            "firing_rate": mean(&fr),
            "reports": runs,
        }));
    }
    Ok(json!({ "axes": axes, "cells": rows }))
}
