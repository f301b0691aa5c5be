//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep. A graph can be
//! differentiated once; build a fresh graph for every forward pass.

mod conv;
mod elementwise;
pub mod gradcheck;
mod norm;
mod pool;
mod shape;
mod spike;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::{conv_output_len, conv_transpose_output_len};
pub use elementwise::sigmoid;
pub use norm::RunningStats;
pub use spike::{atan_surrogate_grad, atan_surrogate_primitive, plif_leak, PlifOutput, PlifParams, SurrogateSpec, MAX_LEAK};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Structural classification of activation tensors, used by binariness probes
/// and by operation counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    /// Output of a firing neuron, or a pure re-arrangement of such outputs.
    Spike,
    /// Spike-element-wise ADD output: small non-negative integers.
    SewAdd,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    ScalarMul(Var, Var),
    Sum(Var),
    SumAxis { input: Var, axis: usize },
    Reshape(Var),
    Ln(Var),
    Powf(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    SmoothL1(Var, f64),
    Softmax { input: Var, axis: usize },
    LogSoftmax { input: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Conv2d(conv::ConvSaved),
    ConvTranspose2d(conv::ConvSaved),
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchNorm(norm::BnSaved),
    AvgPool2d { input: Var, kernel: usize, stride: usize },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    HeadFlatten { input: Var, anchors: usize, k: usize },
    Spike { input: Var, spec: SurrogateSpec },
    Plif(spike::PlifSaved),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
    activation: Option<ActivationKind>,
}

/// A single forward/backward computation graph.
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    smooth_spikes: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            smooth_spikes: false,
        }
    }

    /// A graph whose spike ops use the smooth surrogate primitive in the
    /// forward pass. The backward pass is unchanged, so finite differences of
    /// this graph check the surrogate chain exactly.
    pub fn with_smooth_spikes() -> Self {
        Self {
            smooth_spikes: true,
            ..Self::new()
        }
    }

    pub fn smooth_spikes(&self) -> bool {
        self.smooth_spikes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn activation(&self, v: Var) -> Option<ActivationKind> {
        self.nodes[v.0].activation
    }

    /// True when `v` is structurally a binary spike tensor.
    pub fn is_spiking(&self, v: Var) -> bool {
        self.activation(v) == Some(ActivationKind::Spike)
    }

    /// True when `v` was produced by a firing op rather than re-arranged.
    pub fn is_firing(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Spike { .. } | Op::Plif(_))
    }

    pub fn mark_activation(&mut self, v: Var, kind: ActivationKind) {
        self.nodes[v.0].activation = Some(kind);
    }

    /// Every node tagged as an activation, in creation order.
    pub fn activations(&self) -> impl Iterator<Item = (Var, ActivationKind, &Tensor)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.activation.map(|k| (Var(i), k, &n.value)))
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            activation: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a scalar loss. Populates the gradient of every
    /// node that depends on a differentiable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                let needs = |v: Var| self.nodes[v.0].requires_grad;
                let contributions = self.backward_op(i, &g, &needs)?;
                for (parent, pg) in contributions {
                    if !needs(parent) {
                        continue;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => acc.add_assign(&pg)?,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backward_op(
        &self,
        i: usize,
        g: &Tensor,
        needs: &dyn Fn(Var) -> bool,
    ) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |g, y| g * y)?),
                (*b, g.zip_map(val(*a), |g, x| g * x)?),
            ],
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::AddScalar(a) | Op::AddConst(a) => vec![(*a, g.clone())],
            Op::MulConst(a, c) => vec![(*a, g.zip_map(c, |g, c| g * c)?)],
            Op::ScalarMul(a, s) => {
                let sv = val(*s).data()[0];
                let gs = g.dot(val(*a))?;
                vec![(*a, g.map(|v| v * sv)), (*s, Tensor::scalar(gs))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::SumAxis { input, axis } => {
                vec![(*input, shape::sum_axis_backward(g, val(*input).shape(), *axis))]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
            Op::Ln(a) => vec![(*a, g.zip_map(val(*a), |g, x| g / x)?)],
            Op::Powf(a, p) => vec![(*a, g.zip_map(val(*a), |g, x| g * p * x.powf(p - 1.0))?)],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |g, y| g * y * (1.0 - y))?)],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Op::Clamp(a, lo, hi) => vec![(
                *a,
                g.zip_map(val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 })?,
            )],
            Op::SmoothL1(a, beta) => vec![(
                *a,
                g.zip_map(val(*a), |g, x| {
                    if x.abs() < *beta {
                        g * x / beta
                    } else {
                        g * x.signum()
                    }
                })?,
            )],
            Op::Softmax { input, axis } => {
                vec![(*input, elementwise::softmax_backward(g, out, *axis))]
            }
            Op::LogSoftmax { input, axis } => {
                vec![(*input, elementwise::log_softmax_backward(g, out, *axis))]
            }
            Op::Concat { inputs, axis } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| val(*v).shape()).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(shape::concat_backward(g, &shapes, *axis))
                    .collect()
            }
            Op::Slice { input, axis, start } => {
                vec![(*input, shape::slice_backward(g, val(*input).shape(), *axis, *start))]
            }
            Op::Conv2d(s) => conv::conv2d_backward(s, g, &val, needs),
            Op::ConvTranspose2d(s) => conv::conv_transpose2d_backward(s, g, &val, needs),
            Op::Linear { x, w, b } => conv::linear_backward(*x, *w, *b, g, &val),
            Op::BatchNorm(s) => norm::batch_norm_backward(s, g, &val),
            Op::AvgPool2d {
                input,
                kernel,
                stride,
            } => vec![(
                *input,
                pool::avg_pool_backward(g, val(*input).shape(), *kernel, *stride),
            )],
            Op::MaxPool2d { input, argmax } => {
                vec![(*input, pool::max_pool_backward(g, val(*input).shape(), argmax))]
            }
            Op::GlobalAvgPool(a) => vec![(*a, pool::global_avg_pool_backward(g, val(*a).shape()))],
            Op::HeadFlatten { input, anchors, k } => vec![(
                *input,
                shape::head_flatten_backward(g, val(*input).shape(), *anchors, *k),
            )],
            Op::Spike { input, spec, .. } => {
                let a = spec.alpha;
                vec![(
                    *input,
                    g.zip_map(val(*input), |g, x| g * atan_surrogate_grad(x, a))?,
                )]
            }
            Op::Plif(s) => spike::plif_backward(s, g, &val),
        })
    }
}
