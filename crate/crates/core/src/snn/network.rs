//! Network assembly: dense spiking backbone, classifier, and the detection
//! backbone with optional multi-scale fusion.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::blocks::{ConvBnPlif, DenseBlock, ExtraBlock, SewResBlock, Transition};
use super::fusion::{FusionSpec, SpikingFusion};
use super::plif::{Neurons, PlifNeuron, SpikeCounter};
use crate::autograd::{conv_output_len, PlifParams, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub layers: usize,
    pub growth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraConfig {
    pub mid_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    /// Transition width as a fraction of the dense-stage output width.
    pub compression: f64,
    /// Stages whose transition output is exposed as a tap.
    pub tap_stages: Vec<usize>,
    /// Extra blocks appended after the last stage; each output is a tap.
    pub extras: Vec<ExtraConfig>,
    pub plif: PlifParams,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_channels == 0 || self.stem_stride == 0 {
            return invalid("backbone widths and stem stride must be positive");
        }
        if self.stages.is_empty() {
            return invalid("backbone needs at least one dense stage");
        }
        if self.stages.iter().any(|s| s.growth == 0) {
            return invalid("growth rate must be positive");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return invalid(format!("compression {} outside (0, 1]", self.compression));
        }
        if let Some(&bad) = self.tap_stages.iter().find(|&&i| i >= self.stages.len()) {
            return invalid(format!("tap stage {bad} does not exist"));
        }
        if self.extras.iter().any(|e| e.mid_channels == 0 || e.out_channels == 0) {
            return invalid("extra block widths must be positive");
        }
        Ok(())
    }

    fn transition_width(&self, c: usize) -> usize {
        ((c as f64 * self.compression).round() as usize).max(1)
    }

    /// `(channels, (h, w))` of every tap for an input of `hw` pixels.
    pub fn tap_shapes(&self, hw: (usize, usize)) -> Result<Vec<(usize, (usize, usize))>> {
        let too_small = || Error::InvalidArgument(format!("input {hw:?} too small for the backbone"));
        let mut h = conv_output_len(hw.0, 3, self.stem_stride, 1).ok_or_else(too_small)?;
        let mut w = conv_output_len(hw.1, 3, self.stem_stride, 1).ok_or_else(too_small)?;
        let mut c = self.stem_channels;
        let mut taps = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            c = self.transition_width(c + st.layers * st.growth);
            if h < 2 || w < 2 {
                return Err(too_small());
            }
            h /= 2;
            w /= 2;
            if self.tap_stages.contains(&i) {
                taps.push((c, (h, w)));
            }
        }
        for e in &self.extras {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
            taps.push((e.out_channels, (h, w)));
        }
        Ok(taps)
    }

    /// Width of the last stage's transition output.
    pub fn out_channels(&self) -> usize {
        let mut c = self.stem_channels;
        for st in &self.stages {
            c = self.transition_width(c + st.layers * st.growth);
        }
        c
    }
}

/// Stem, dense stages with transitions, and extra blocks.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stem: ConvBnPlif,
    pub stages: Vec<(DenseBlock, Transition)>,
    pub extras: Vec<ExtraBlock>,
}

pub struct BackboneOutput {
    /// Output of the last transition.
    pub last: Var,
    pub taps: Vec<Var>,
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let p = config.plif;
        let stem = ConvBnPlif::new(
            store,
            &format!("{name}.stem"),
            config.in_channels,
            config.stem_channels,
            3,
            config.stem_stride,
            1,
            p,
            rng,
        );
        let mut c = config.stem_channels;
        let mut stages = Vec::new();
        for (i, st) in config.stages.iter().enumerate() {
            let dense = DenseBlock::new(store, &format!("{name}.stage{i}.dense"), c, st.layers, st.growth, p, rng);
            let out = config.transition_width(dense.out_channels());
            let trans = Transition::new(store, &format!("{name}.stage{i}.transition"), dense.out_channels(), out, p, rng);
            stages.push((dense, trans));
            c = out;
        }
        let mut extras = Vec::new();
        for (i, e) in config.extras.iter().enumerate() {
            extras.push(ExtraBlock::new(
                store,
                &format!("{name}.extra{i}"),
                c,
                e.mid_channels,
                e.out_channels,
                p,
                rng,
            ));
            c = e.out_channels;
        }
        Ok(Self {
            config: config.clone(),
            stem,
            stages,
            extras,
        })
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<BackboneOutput> {
        let c = ctx.graph.shape(x).get(1).copied();
        if c != Some(self.config.in_channels) {
            return shape_err(format!(
                "backbone expects {} input channels, got shape {:?}",
                self.config.in_channels,
                ctx.graph.shape(x)
            ));
        }
        let mut y = self.stem.forward(ctx, x)?;
        let mut taps = Vec::new();
        for (i, (dense, trans)) in self.stages.iter_mut().enumerate() {
            y = dense.forward(ctx, y)?;
            y = trans.forward(ctx, y)?;
            if self.config.tap_stages.contains(&i) {
                taps.push(y);
            }
        }
        let last = y;
        for e in &mut self.extras {
            y = e.forward(ctx, y)?;
            taps.push(y);
        }
        Ok(BackboneOutput { last, taps })
    }
}

impl Neurons for Backbone {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.stem.neurons(out);
        for (d, t) in &self.stages {
            d.neurons(out);
            t.neurons(out);
        }
        self.extras.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.stem.neurons_mut(out);
        for (d, t) in &mut self.stages {
            d.neurons_mut(out);
            t.neurons_mut(out);
        }
        self.extras.neurons_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backbone: BackboneConfig,
    pub classes: usize,
}

impl ClassifierConfig {
    /// 64x64 input, two dense stages.
    pub fn toy(in_channels: usize, classes: usize) -> Self {
        Self {
            backbone: BackboneConfig {
                in_channels,
                stem_channels: 8,
                stem_stride: 2,
                stages: vec![StageConfig { layers: 2, growth: 8 }, StageConfig { layers: 2, growth: 8 }],
                compression: 0.5,
                tap_stages: vec![],
                extras: vec![],
                plif: PlifParams::default(),
            },
            classes,
        }
    }
}

/// Backbone, global average pooling, fully connected layer and a final PLIF.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub backbone: Backbone,
    pub fc: Linear,
    pub out: PlifNeuron,
}

pub struct ClassifierOutput {
    /// Output spikes `[T*N, classes]`.
    pub spikes: Var,
    /// Input currents of the output layer `[T*N, classes]`.
    pub currents: Var,
}

pub fn build_classifier<R: Rng>(store: &mut ParamStore, config: &ClassifierConfig, rng: &mut R) -> Result<Classifier> {
    if config.classes == 0 {
        return invalid("classifier needs at least one class");
    }
    let backbone = Backbone::new(store, "backbone", &config.backbone, rng)?;
    let fc = Linear::new(store, "fc", config.backbone.out_channels(), config.classes, rng);
    let out = PlifNeuron::new(store, "fc.plif", config.backbone.plif);
    Ok(Classifier {
        config: config.clone(),
        backbone,
        fc,
        out,
    })
}

impl Classifier {
    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<ClassifierOutput> {
        let feats = self.backbone.forward(ctx, x)?;
        let pooled = ctx.graph.global_avg_pool(feats.last)?;
        let currents = self.fc.forward(ctx, pooled)?;
        let spikes = self.out.forward(ctx, currents)?;
        Ok(ClassifierOutput { spikes, currents })
    }
}

impl Neurons for Classifier {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.backbone.neurons(out);
        out.push(&self.out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.backbone.neurons_mut(out);
        out.push(&mut self.out);
    }
}

/// Which backbone scales feed the fusion module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Head reads the backbone taps directly.
    None,
    /// Fuse the first three taps.
    Three,
    /// Fuse the first four taps (the fourth is the first extra block).
    Four,
}

impl FusionMode {
    pub fn fuse_layers(self) -> Option<Vec<usize>> {
        match self {
            FusionMode::None => None,
            FusionMode::Three => Some(vec![0, 1, 2]),
            FusionMode::Four => Some(vec![0, 1, 2, 3]),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::None => "none",
            FusionMode::Three => "3",
            FusionMode::Four => "4",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "0" => Ok(FusionMode::None),
            "3" => Ok(FusionMode::Three),
            "4" => Ok(FusionMode::Four),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}; expected none, 3 or 4"))),
        }
    }
}

impl Serialize for FusionMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FusionMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        let s = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Str(s) => s,
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub backbone: BackboneConfig,
    pub input_hw: (usize, usize),
    pub fusion_mode: FusionMode,
    pub fusion: FusionSpec,
    /// Pyramid levels read by the head when fusion is off.
    pub head_taps: Vec<usize>,
}

impl DetectorConfig {
    /// 64x64 input; taps at 16x16, 8x8, 4x4 and an extra 2x2.
    pub fn toy(in_channels: usize, fusion_mode: FusionMode) -> Self {
        Self {
            backbone: BackboneConfig {
                in_channels,
                stem_channels: 16,
                stem_stride: 2,
                stages: vec![
                    StageConfig { layers: 2, growth: 8 },
                    StageConfig { layers: 2, growth: 8 },
                    StageConfig { layers: 2, growth: 8 },
                ],
                compression: 0.5,
                tap_stages: vec![0, 1, 2],
                extras: vec![ExtraConfig {
                    mid_channels: 8,
                    out_channels: 16,
                }],
                plif: PlifParams::default(),
            },
            input_hw: (64, 64),
            fusion_mode,
            fusion: FusionSpec {
                fused_channels: 16,
                pyramid_levels: 3,
                ..FusionSpec::default()
            },
            head_taps: vec![0, 1, 2],
        }
    }
}

/// Backbone plus optional fusion; produces the spiking pyramid maps.
#[derive(Debug, Clone)]
pub struct DetectorBackbone {
    pub config: DetectorConfig,
    pub backbone: Backbone,
    pub fusion: Option<SpikingFusion>,
}

pub fn build_detector_backbone<R: Rng>(
    store: &mut ParamStore,
    config: &DetectorConfig,
    rng: &mut R,
) -> Result<DetectorBackbone> {
    let backbone = Backbone::new(store, "backbone", &config.backbone, rng)?;
    let taps = config.backbone.tap_shapes(config.input_hw)?;
    let fusion = match config.fusion_mode.fuse_layers() {
        None => {
            if config.head_taps.is_empty() {
                return invalid("detector needs at least one head tap");
            }
            if let Some(&bad) = config.head_taps.iter().find(|&&i| i >= taps.len()) {
                return invalid(format!("head tap {bad} does not exist"));
            }
            None
        }
        Some(layers) => {
            let spec = FusionSpec {
                fuse_layers: layers,
                ..config.fusion.clone()
            };
            Some(SpikingFusion::new(store, "fusion", &spec, &taps, config.backbone.plif, rng)?)
        }
    };
    Ok(DetectorBackbone {
        config: config.clone(),
        backbone,
        fusion,
    })
}

impl DetectorBackbone {
    /// `(channels, (h, w))` of every map handed to the head.
    pub fn pyramid_shapes(&self) -> Result<Vec<(usize, (usize, usize))>> {
        let taps = self.config.backbone.tap_shapes(self.config.input_hw)?;
        Ok(match &self.fusion {
            None => self.config.head_taps.iter().map(|&i| taps[i]).collect(),
            Some(f) => f.level_shapes(f.target_hw()),
        })
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Vec<Var>> {
        let out = self.backbone.forward(ctx, x)?;
        match &mut self.fusion {
            None => Ok(self.config.head_taps.iter().map(|&i| out.taps[i]).collect()),
            Some(f) => f.forward(ctx, &out.taps),
        }
    }

    pub fn sew_blocks(&self) -> Vec<&SewResBlock> {
        self.fusion.iter().flat_map(|f| f.spes.sew_blocks()).collect()
    }

    /// Entries equal to 2 over all SEW outputs since the last reset.
    pub fn non_binary(&self) -> SpikeCounter {
        self.sew_blocks().iter().fold(SpikeCounter::default(), |acc, b| SpikeCounter {
            spikes: acc.spikes + b.non_binary.spikes,
            slots: acc.slots + b.non_binary.slots,
        })
    }

    pub fn reset_all(&mut self) {
        self.reset_state();
        if let Some(f) = &mut self.fusion {
            f.spes.sew_blocks_mut().for_each(|b| b.non_binary = SpikeCounter::default());
        }
    }
}

impl Neurons for DetectorBackbone {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.backbone.neurons(out);
        self.fusion.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.backbone.neurons_mut(out);
        self.fusion.neurons_mut(out);
    }
}
