use super::elementwise::axis_split;
use super::{ActivationKind, Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub(crate) fn sum_axis_backward(g: &Tensor, in_shape: &[usize], axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(in_shape, axis);
    let gd = g.data();
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for j in 0..len {
            let dst = &mut out[(o * len + j) * inner..(o * len + j + 1) * inner];
            dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_vec(in_shape, out).expect("shape")
}

pub(crate) fn concat_backward(g: &Tensor, shapes: &[&[usize]], axis: usize) -> Vec<Tensor> {
    let (outer, total, inner) = axis_split(g.shape(), axis);
    let gd = g.data();
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let len = s[axis];
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * total + offset) * inner;
                out.extend_from_slice(&gd[base..base + len * inner]);
            }
            offset += len;
            Tensor::from_vec(s, out).expect("shape")
        })
        .collect()
}

pub(crate) fn slice_backward(g: &Tensor, in_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, total, inner) = axis_split(in_shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![0.0; outer * total * inner];
    let gd = g.data();
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_vec(in_shape, out).expect("shape")
}

/// `[N, A*K, H, W]` -> `[N, H*W*A, K]`, row-major cells, anchor-minor.
fn head_flatten_forward(x: &Tensor, anchors: usize, k: usize) -> Tensor {
    let s = x.shape();
    let (n, _, h, w) = (s[0], s[1], s[2], s[3]);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for a in 0..anchors {
            for c in 0..k {
                let ch = a * k + c;
                for y in 0..h {
                    for xx in 0..w {
                        let si = ((b * anchors * k + ch) * h + y) * w + xx;
                        let di = ((b * h * w + y * w + xx) * anchors + a) * k + c;
                        out[di] = src[si];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, h * w * anchors, k], out).expect("shape")
}

pub(crate) fn head_flatten_backward(g: &Tensor, in_shape: &[usize], anchors: usize, k: usize) -> Tensor {
    let (n, h, w) = (in_shape[0], in_shape[2], in_shape[3]);
    let gd = g.data();
    let mut out = vec![0.0; gd.len()];
    for b in 0..n {
        for a in 0..anchors {
            for c in 0..k {
                let ch = a * k + c;
                for y in 0..h {
                    for xx in 0..w {
                        let si = ((b * anchors * k + ch) * h + y) * w + xx;
                        let di = ((b * h * w + y * w + xx) * anchors + a) * k + c;
                        out[si] = gd[di];
                    }
                }
            }
        }
    }
    Tensor::from_vec(in_shape, out).expect("shape")
}

impl Graph {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let out = self.push_op(v, Op::Reshape(a), &[a]);
        if self.is_spiking(a) {
            self.mark_activation(out, ActivationKind::Spike);
        }
        Ok(out)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let s = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let v = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push_op(v, Op::SumAxis { input: a, axis }, &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return shape_err(format!("concat {base:?} with {s:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let v = Tensor::from_vec(&out_shape, out)?;
        let all_spiking = inputs.iter().all(|&v| self.is_spiking(v));
        let out = self.push_op(
            v,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        );
        if all_spiking {
            self.mark_activation(out, ActivationKind::Spike);
        }
        Ok(out)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return shape_err(format!("slice {start}+{len} on axis {axis} of {shape:?}"));
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * total + start) * inner;
            out.extend_from_slice(&d[b..b + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::from_vec(&out_shape, out)?;
        let spiking = self.is_spiking(a);
        let out = self.push_op(v, Op::Slice { input: a, axis, start }, &[a]);
        if spiking {
            self.mark_activation(out, ActivationKind::Spike);
        }
        Ok(out)
    }

    /// Re-arrange head conv output `[N, A*K, H, W]` into per-anchor rows
    /// `[N, H*W*A, K]`.
    pub fn head_flatten(&mut self, a: Var, anchors: usize, k: usize) -> Result<Var> {
        let (_, c, _, _) = self.value(a).dims4()?;
        if c != anchors * k {
            return shape_err(format!("head output has {c} channels, expected {anchors}x{k}"));
        }
        let v = head_flatten_forward(self.value(a), anchors, k);
        Ok(self.push_op(v, Op::HeadFlatten { input: a, anchors, k }, &[a]))
    }
}
