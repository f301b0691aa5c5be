use super::{Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn pooled_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (input >= kernel && stride > 0).then(|| (input - kernel) / stride + 1)
}

pub(crate) fn avg_pool_backward(g: &Tensor, in_shape: &[usize], k: usize, s: usize) -> Tensor {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, oh, ow) = g.dims4().expect("4-D");
    let gd = g.data();
    let mut out = vec![0.0; n * c * h * w];
    let norm = 1.0 / (k * k) as f64;
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gd[(p * oh + oy) * ow + ox] * norm;
                for ky in 0..k {
                    for kx in 0..k {
                        out[(p * h + oy * s + ky) * w + ox * s + kx] += gv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(in_shape, out).expect("shape")
}

pub(crate) fn max_pool_backward(g: &Tensor, in_shape: &[usize], argmax: &[usize]) -> Tensor {
    let mut out = vec![0.0; in_shape.iter().product()];
    for (&src, &gv) in argmax.iter().zip(g.data()) {
        out[src] += gv;
    }
    Tensor::from_vec(in_shape, out).expect("shape")
}

pub(crate) fn global_avg_pool_backward(g: &Tensor, in_shape: &[usize]) -> Tensor {
    let inner: usize = in_shape[2..].iter().product();
    let norm = 1.0 / inner as f64;
    let data = g
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat(v * norm).take(inner))
        .collect();
    Tensor::from_vec(in_shape, data).expect("shape")
}

impl Graph {
    /// Average pooling, floor mode, no padding.
    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (Some(oh), Some(ow)) = (pooled_len(h, kernel, stride), pooled_len(w, kernel, stride)) else {
            return shape_err(format!("pool kernel {kernel} exceeds input {h}x{w}"));
        };
        let xs = self.value(x).data();
        let norm = 1.0 / (kernel * kernel) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            s += xs[(p * h + oy * stride + ky) * w + ox * stride + kx];
                        }
                    }
                    out[(p * oh + oy) * ow + ox] = s * norm;
                }
            }
        }
        let v = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(self.push_op(v, Op::AvgPool2d { input: x, kernel, stride }, &[x]))
    }

    /// Max pooling, floor mode, no padding. Ties resolve to the first index.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (Some(oh), Some(ow)) = (pooled_len(h, kernel, stride), pooled_len(w, kernel, stride)) else {
            return shape_err(format!("pool kernel {kernel} exceeds input {h}x{w}"));
        };
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0; out.len()];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = (p * h + oy * stride + ky) * w + ox * stride + kx;
                            if xs[i] > best.0 {
                                best = (xs[i], i);
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best.0;
                    argmax[o] = best.1;
                }
            }
        }
        let v = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let spiking = self.is_spiking(x);
        let out = self.push_op(v, Op::MaxPool2d { input: x, argmax }, &[x]);
        if spiking {
            self.mark_activation(out, super::ActivationKind::Spike);
        }
        Ok(out)
    }

    /// Mean over all spatial positions: `[N, C, H, W]` -> `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xs = self.value(x).data();
        let inner = h * w;
        let out = xs
            .chunks(inner)
            .map(|p| p.iter().sum::<f64>() / inner as f64)
            .collect();
        let v = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push_op(v, Op::GlobalAvgPool(x), &[x]))
    }
}
