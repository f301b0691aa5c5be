//! Parameters, forward context, and the non-spiking layer primitives.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, RunningStats, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// BN running-statistics momentum (`stats = m * stats + (1 - m) * batch`).
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers (BN running statistics) are stored alongside parameters but
    /// are never touched by the optimizer.
    pub trainable: bool,
}

/// Flat registry of every tensor a network owns.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }
}

/// What kind of arithmetic an operation site performs, for energy accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Conv,
    ConvTranspose,
    Linear,
    BatchNorm,
    SewAdd,
}

/// Shape-level record of one operation site, captured during a profiling pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub name: String,
    pub kind: OpKind,
    /// Whether the input is structurally a binary spike tensor.
    pub spiking_input: bool,
    /// Output shape including the leading `T * N` axis.
    pub out_shape: Vec<usize>,
    /// Synaptic operations over the whole pass (all time steps and samples).
    pub ops: u64,
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().product::<usize>() as u64
}

/// Number of `(input index, kernel tap)` pairs along one axis of a transposed
/// convolution that land inside the output.
fn transposed_pairs(input: usize, kernel: usize, stride: usize, pad: usize, out: usize) -> u64 {
    let mut n = 0;
    for i in 0..input {
        for k in 0..kernel {
            let o = (i * stride + k) as isize - pad as isize;
            if o >= 0 && (o as usize) < out {
                n += 1;
            }
        }
    }
    n
}

/// State threaded through one forward pass.
pub struct Ctx<'a> {
    pub graph: Graph,
    pub store: &'a mut ParamStore,
    pub train: bool,
    /// Number of simulation time steps folded into the batch axis.
    pub steps: usize,
    bindings: HashMap<ParamId, Var>,
    profile: Option<Vec<OpRecord>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a mut ParamStore, steps: usize, train: bool) -> Self {
        Self::with_graph(Graph::new(), store, steps, train)
    }

    pub fn with_graph(graph: Graph, store: &'a mut ParamStore, steps: usize, train: bool) -> Self {
        Self {
            graph,
            store,
            train,
            steps,
            bindings: HashMap::new(),
            profile: None,
        }
    }

    /// Record shapes of every operation site during this pass.
    pub fn enable_profile(&mut self) {
        self.profile = Some(Vec::new());
    }

    pub fn take_profile(&mut self) -> Vec<OpRecord> {
        self.profile.take().unwrap_or_default()
    }

    pub fn record(&mut self, rec: OpRecord) {
        if let Some(p) = &mut self.profile {
            p.push(rec);
        }
    }

    /// Graph leaf bound to a parameter; created once per pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bindings.get(&id) {
            return v;
        }
        let v = self.graph.leaf(self.store.value(id).clone());
        self.bindings.insert(id, v);
        v
    }

    /// Backward from `loss`, then add the parameter gradients into the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)?;
        for (&id, &v) in &self.bindings {
            if let Some(g) = self.graph.grad(v) {
                self.store.entries[id.0].grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

/// He (Kaiming) normal initialization with the given fan-in.
pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| normal.sample(rng))
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = he_normal(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self {
            name: name.to_string(),
            weight,
            bias,
            stride: (stride, stride),
            pad: (pad, pad),
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let spiking = ctx.graph.is_spiking(x);
        self.forward_as(ctx, x, spiking)
    }

    /// Forward with the accounting class of the input given explicitly, for
    /// convolutions fed through a foldable affine (BN) from a spike tensor.
    pub fn forward_as(&self, ctx: &mut Ctx, x: Var, spiking: bool) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        let y = ctx.graph.conv2d(x, w, b, self.stride, self.pad)?;
        let out_shape = ctx.graph.shape(y).to_vec();
        ctx.record(OpRecord {
            name: self.name.clone(),
            kind: OpKind::Conv,
            spiking_input: spiking,
            ops: numel(&out_shape) * (self.in_ch * self.kernel * self.kernel) as u64,
            out_shape,
        });
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub name: String,
    pub weight: ParamId,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub output_padding: (usize, usize),
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        output_padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let w = he_normal(&[in_ch, out_ch, kernel.0, kernel.1], out_ch * kernel.0 * kernel.1, rng);
        let weight = store.add(format!("{name}.weight"), w);
        Self {
            name: name.to_string(),
            weight,
            stride,
            pad,
            output_padding,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let spiking = ctx.graph.is_spiking(x);
        self.forward_as(ctx, x, spiking)
    }

    pub fn forward_as(&self, ctx: &mut Ctx, x: Var, spiking: bool) -> Result<Var> {
        let w = ctx.param(self.weight);
        let (n, _, h, wd) = ctx.graph.value(x).dims4()?;
        let y = ctx
            .graph
            .conv_transpose2d(x, w, self.stride, self.pad, self.output_padding)?;
        let out_shape = ctx.graph.shape(y).to_vec();
        let pairs = transposed_pairs(h, self.kernel.0, self.stride.0, self.pad.0, out_shape[2])
            * transposed_pairs(wd, self.kernel.1, self.stride.1, self.pad.1, out_shape[3]);
        ctx.record(OpRecord {
            name: self.name.clone(),
            kind: OpKind::ConvTranspose,
            spiking_input: spiking,
            ops: n as u64 * (self.in_ch * self.out_ch) as u64 * pairs,
            out_shape,
        });
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            channels,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let mut stats = RunningStats {
            mean: ctx.store.value(self.running_mean).data().to_vec(),
            var: ctx.store.value(self.running_var).data().to_vec(),
        };
        let y = ctx
            .graph
            .batch_norm(x, gamma, beta, &mut stats, ctx.train, BN_MOMENTUM, BN_EPS)?;
        if ctx.train {
            ctx.store.value_mut(self.running_mean).data_mut().copy_from_slice(&stats.mean);
            ctx.store.value_mut(self.running_var).data_mut().copy_from_slice(&stats.var);
        }
        let out_shape = ctx.graph.shape(y).to_vec();
        ctx.record(OpRecord {
            name: self.name.clone(),
            kind: OpKind::BatchNorm,
            spiking_input: false,
            ops: numel(&out_shape),
            out_shape,
        });
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Self {
            name: name.to_string(),
            weight: store.add(format!("{name}.weight"), he_normal(&[out, inp], inp, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out])),
            in_features: inp,
            out_features: out,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let spiking = ctx.graph.is_spiking(x);
        let y = ctx.graph.linear(x, w, Some(b))?;
        let out_shape = ctx.graph.shape(y).to_vec();
        ctx.record(OpRecord {
            name: self.name.clone(),
            kind: OpKind::Linear,
            spiking_input: spiking,
            ops: numel(&out_shape) * self.in_features as u64,
            out_shape,
        });
        Ok(y)
    }
}
