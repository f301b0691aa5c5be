//! Spiking building blocks. Every block consumes and produces time-major
//! tensors `[T*N, C, H, W]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plif::{Neurons, PlifNeuron, SpikeCounter};
use crate::autograd::{conv_transpose_output_len, ActivationKind, PlifParams, Var};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, OpKind, OpRecord};

/// BN, then convolution, then PLIF firing.
#[derive(Debug, Clone)]
pub struct ConvBnPlif {
    pub bn: BatchNorm2d,
    pub conv: Conv2d,
    pub plif: PlifNeuron,
}

impl ConvBnPlif {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        Self {
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), in_ch),
            conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, kernel, stride, pad, false, rng),
            plif: PlifNeuron::new(store, &format!("{name}.plif"), params),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_ch
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let spiking = ctx.graph.is_spiking(x);
        let y = self.bn.forward(ctx, x)?;
        let y = self.conv.forward_as(ctx, y, spiking)?;
        self.plif.forward(ctx, y)
    }
}

impl Neurons for ConvBnPlif {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        out.push(&self.plif);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        out.push(&mut self.plif);
    }
}

/// Densely connected stage: each inner layer sees the concatenation of the
/// block input and every earlier layer output.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<ConvBnPlif>,
    pub in_ch: usize,
    pub growth: usize,
}

impl DenseBlock {
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        in_ch: usize,
        layers: usize,
        growth: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|i| {
                ConvBnPlif::new(store, &format!("{name}.layer{i}"), in_ch + i * growth, growth, 3, 1, 1, params, rng)
            })
            .collect();
        Self { layers, in_ch, growth }
    }

    pub fn out_channels(&self) -> usize {
        self.in_ch + self.layers.len() * self.growth
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for layer in &mut self.layers {
            let inp = if feats.len() == 1 { feats[0] } else { ctx.graph.concat(&feats, 1)? };
            feats.push(layer.forward(ctx, inp)?);
        }
        if feats.len() == 1 {
            return Ok(x);
        }
        ctx.graph.concat(&feats, 1)
    }
}

impl Neurons for DenseBlock {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.layers.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.layers.neurons_mut(out);
    }
}

/// Down-sampling between dense stages: BN, 1x1 conv, 2x2 average pool, PLIF.
#[derive(Debug, Clone)]
pub struct Transition {
    pub bn: BatchNorm2d,
    pub conv: Conv2d,
    pub plif: PlifNeuron,
}

impl Transition {
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        Self {
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), in_ch),
            conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 1, 1, 0, false, rng),
            plif: PlifNeuron::new(store, &format!("{name}.plif"), params),
        }
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let spiking = ctx.graph.is_spiking(x);
        let y = self.bn.forward(ctx, x)?;
        let y = self.conv.forward_as(ctx, y, spiking)?;
        let y = ctx.graph.avg_pool2d(y, 2, 2)?;
        self.plif.forward(ctx, y)
    }
}

impl Neurons for Transition {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        out.push(&self.plif);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        out.push(&mut self.plif);
    }
}

/// 1x1 squeeze then 3x3 stride-2 convolution; spatial size `ceil(h/2)`.
#[derive(Debug, Clone)]
pub struct ExtraBlock {
    pub squeeze: ConvBnPlif,
    pub down: ConvBnPlif,
}

impl ExtraBlock {
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        Self {
            squeeze: ConvBnPlif::new(store, &format!("{name}.squeeze"), in_ch, mid_ch, 1, 1, 0, params, rng),
            down: ConvBnPlif::new(store, &format!("{name}.down"), mid_ch, out_ch, 3, 2, 1, params, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.down.out_channels()
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.squeeze.forward(ctx, x)?;
        self.down.forward(ctx, y)
    }
}

impl Neurons for ExtraBlock {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.squeeze.neurons(out);
        self.down.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.squeeze.neurons_mut(out);
        self.down.neurons_mut(out);
    }
}

/// Transposed-convolution geometry along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleAxis {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_padding: usize,
}

/// Pick a transposed convolution mapping `input` to exactly `target` pixels.
///
/// With `s = target / input` and `r = target % input`: equal sizes use a 3x3
/// kernel with padding 1; otherwise stride `s` with kernel `s` and output
/// padding `r` when `r < s`, or kernel `s + r` and no output padding.
pub fn solve_upsample(input: usize, target: usize) -> Result<UpsampleAxis> {
    if input == 0 || target < input {
        return invalid(format!("cannot upsample {input} to {target}"));
    }
    let s = target / input;
    let r = target % input;
    let axis = if s == 1 && r == 0 {
        UpsampleAxis { kernel: 3, stride: 1, pad: 1, output_padding: 0 }
    } else if r < s {
        UpsampleAxis { kernel: s, stride: s, pad: 0, output_padding: r }
    } else {
        UpsampleAxis { kernel: s + r, stride: s, pad: 0, output_padding: 0 }
    };
    match conv_transpose_output_len(input, axis.kernel, axis.stride, axis.pad, axis.output_padding) {
        Some(out) if out == target => Ok(axis),
        _ => invalid(format!("no transposed convolution maps {input} to {target}")),
    }
}

/// Per-scale transform of the fusion module: 1x1 conv-BN-PLIF to the fused
/// width, then BN, transposed convolution to the target size, and PLIF.
#[derive(Debug, Clone)]
pub struct DeconvBlock {
    pub squeeze: ConvBnPlif,
    pub bn: BatchNorm2d,
    pub up: ConvTranspose2d,
    pub plif: PlifNeuron,
    pub target: (usize, usize),
}

impl DeconvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        in_ch: usize,
        fused_ch: usize,
        input_hw: (usize, usize),
        target_hw: (usize, usize),
        params: PlifParams,
        rng: &mut R,
    ) -> Result<Self> {
        let ay = solve_upsample(input_hw.0, target_hw.0)?;
        let ax = solve_upsample(input_hw.1, target_hw.1)?;
        Ok(Self {
            squeeze: ConvBnPlif::new(store, &format!("{name}.squeeze"), in_ch, fused_ch, 1, 1, 0, params, rng),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), fused_ch),
            up: ConvTranspose2d::new(
                store,
                &format!("{name}.up"),
                fused_ch,
                fused_ch,
                (ay.kernel, ax.kernel),
                (ay.stride, ax.stride),
                (ay.pad, ax.pad),
                (ay.output_padding, ax.output_padding),
                rng,
            ),
            plif: PlifNeuron::new(store, &format!("{name}.plif"), params),
            target: target_hw,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.up.out_ch
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.squeeze.forward(ctx, x)?;
        let spiking = ctx.graph.is_spiking(y);
        let z = self.bn.forward(ctx, y)?;
        let z = self.up.forward_as(ctx, z, spiking)?;
        let s = ctx.graph.shape(z);
        if (s[2], s[3]) != self.target {
            return shape_err(format!("deconv produced {}x{}, expected {:?}", s[2], s[3], self.target));
        }
        self.plif.forward(ctx, z)
    }
}

impl Neurons for DeconvBlock {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.squeeze.neurons(out);
        out.push(&self.plif);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.squeeze.neurons_mut(out);
        out.push(&mut self.plif);
    }
}

/// Spike-element-wise residual block with ADD: `body(x) + x`, where the body
/// is two 3x3 conv-BN-PLIF layers. Output entries lie in {0, 1, 2}.
#[derive(Debug, Clone)]
pub struct SewResBlock {
    pub name: String,
    pub conv1: ConvBnPlif,
    pub conv2: ConvBnPlif,
    /// `spikes` counts entries equal to 2, `slots` all output entries.
    pub non_binary: SpikeCounter,
}

impl SewResBlock {
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        channels: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        Self {
            name: name.to_string(),
            conv1: ConvBnPlif::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, params, rng),
            conv2: ConvBnPlif::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, params, rng),
            non_binary: SpikeCounter::default(),
        }
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = ctx.graph.shape(x)[1];
        if c != self.conv1.bn.channels {
            return shape_err(format!(
                "residual block {} expects {} channels, got {c}",
                self.name, self.conv1.bn.channels
            ));
        }
        let y = self.conv1.forward(ctx, x)?;
        let y = self.conv2.forward(ctx, y)?;
        let out = ctx.graph.add(y, x)?;
        ctx.graph.mark_activation(out, ActivationKind::SewAdd);
        let v = ctx.graph.value(out);
        self.non_binary.spikes += v.data().iter().filter(|&&e| e > 1.5).count() as u64;
        self.non_binary.slots += v.numel() as u64;
        let out_shape = v.shape().to_vec();
        ctx.record(OpRecord {
            name: format!("{}.add", self.name),
            kind: OpKind::SewAdd,
            spiking_input: false,
            ops: out_shape.iter().product::<usize>() as u64,
            out_shape,
        });
        Ok(out)
    }
}

impl Neurons for SewResBlock {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.conv1.neurons(out);
        self.conv2.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.conv1.neurons_mut(out);
        self.conv2.neurons_mut(out);
    }
}

/// Dense block followed by a 1x1 conv-BN-PLIF back to the input width.
#[derive(Debug, Clone)]
pub struct SpikingDenseEnh {
    pub dense: DenseBlock,
    pub squeeze: ConvBnPlif,
}

impl SpikingDenseEnh {
    pub fn new<R: Rng>(
        store: &mut crate::nn::ParamStore,
        name: &str,
        channels: usize,
        layers: usize,
        growth: usize,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        let dense = DenseBlock::new(store, &format!("{name}.dense"), channels, layers, growth, params, rng);
        let squeeze = ConvBnPlif::new(
            store,
            &format!("{name}.squeeze"),
            dense.out_channels(),
            channels,
            1,
            1,
            0,
            params,
            rng,
        );
        Self { dense, squeeze }
    }

    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.dense.forward(ctx, x)?;
        self.squeeze.forward(ctx, y)
    }
}

impl Neurons for SpikingDenseEnh {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.dense.neurons(out);
        self.squeeze.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.dense.neurons_mut(out);
        self.squeeze.neurons_mut(out);
    }
}
