use super::{Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// (outer, len, inner) strides for reducing over `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_forward(x: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let m = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|j| (src[idx(j)] - m).exp()).sum();
            let lz = z.ln();
            for j in 0..len {
                let s = src[idx(j)] - m;
                out[idx(j)] = if log { s - lz } else { s.exp() / z };
            }
        }
    }
    Tensor::from_vec(x.shape(), out).expect("same shape")
}

pub(crate) fn softmax_backward(g: &Tensor, y: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (gd, yd) = (g.data(), y.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
            for j in 0..len {
                out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), out).expect("same shape")
}

pub(crate) fn log_softmax_backward(g: &Tensor, y: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (gd, yd) = (g.data(), y.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let gs: f64 = (0..len).map(|j| gd[idx(j)]).sum();
            for j in 0..len {
                out[idx(j)] = gd[idx(j)] - yd[idx(j)].exp() * gs;
            }
        }
    }
    Tensor::from_vec(y.shape(), out).expect("same shape")
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push_op(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push_op(v, Op::AddScalar(a), &[a])
    }

    /// Element-wise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let v = self.value(a).zip_map(c, |x, y| x * y)?;
        Ok(self.push_op(v, Op::MulConst(a, c.clone()), &[a]))
    }

    /// Element-wise sum with a constant tensor.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let v = self.value(a).zip_map(c, |x, y| x + y)?;
        Ok(self.push_op(v, Op::AddConst(a), &[a]))
    }

    /// Multiply every element of `a` by the single element of `s`.
    pub fn scalar_mul(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return shape_err(format!("scalar_mul needs a 1-element factor, got {:?}", self.shape(s)));
        }
        let sv = self.value(s).data()[0];
        let v = self.value(a).map(|x| x * sv);
        Ok(self.push_op(v, Op::ScalarMul(a, s), &[a, s]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push_op(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push_op(v, Op::Ln(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push_op(v, Op::Powf(a, p), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push_op(v, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push_op(v, Op::Relu(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(v, Op::Clamp(a, lo, hi), &[a])
    }

    /// Element-wise smooth-L1 (Huber with transition `beta`).
    pub fn smooth_l1(&mut self, a: Var, beta: f64) -> Var {
        let v = self.value(a).map(|x| {
            if x.abs() < beta {
                0.5 * x * x / beta
            } else {
                x.abs() - 0.5 * beta
            }
        });
        self.push_op(v, Op::SmoothL1(a, beta), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        if axis >= self.value(a).ndim() {
            return shape_err(format!("softmax axis {axis} out of range for {:?}", self.shape(a)));
        }
        let v = softmax_forward(self.value(a), axis, false);
        Ok(self.push_op(v, Op::Softmax { input: a, axis }, &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        if axis >= self.value(a).ndim() {
            return shape_err(format!("log_softmax axis {axis} out of range for {:?}", self.shape(a)));
        }
        let v = softmax_forward(self.value(a), axis, true);
        Ok(self.push_op(v, Op::LogSoftmax { input: a, axis }, &[a]))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
