use super::{Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Initialized to mean 0, variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug)]
pub(crate) struct BnSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

/// `(n, c, inner)` view of a `[N, C, ...]` tensor.
fn bn_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

impl Graph {
    /// Batch normalization over every axis except the channel axis 1.
    ///
    /// In training mode the batch statistics normalize the input and are
    /// blended into `stats` as `stats = momentum * stats + (1 - momentum) * batch`
    /// (unbiased variance). In evaluation mode `stats` normalize the input.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        train: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((n, c, inner)) = bn_dims(&shape) else {
            return shape_err(format!("batch_norm needs [N, C, ...], got {shape:?}"));
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return shape_err(format!("batch_norm parameters do not match {c} channels"));
        }
        let m = n * inner;
        let xs = self.value(x).data();
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;
        let mut inv_std = vec![0.0; c];
        let mut xhat = vec![0.0; xs.len()];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut s = 0.0;
                for b in 0..n {
                    s += xs[idx(b, ch, 0)..idx(b, ch, 0) + inner].iter().sum::<f64>();
                }
                let mean = s / m as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += xs[idx(b, ch, 0)..idx(b, ch, 0) + inner]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
                stats.mean[ch] = momentum * stats.mean[ch] + (1.0 - momentum) * mean;
                stats.var[ch] = momentum * stats.var[ch] + (1.0 - momentum) * unbiased;
                (mean, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ch] = is;
            for b in 0..n {
                for i in 0..inner {
                    let k = idx(b, ch, i);
                    xhat[k] = (xs[k] - mean) * is;
                }
            }
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for b in 0..n {
            for ch in 0..c {
                for v in &mut out[idx(b, ch, 0)..idx(b, ch, 0) + inner] {
                    *v = gd[ch] * *v + bd[ch];
                }
            }
        }
        let v = Tensor::from_vec(&shape, out)?;
        let xhat = Tensor::from_vec(&shape, xhat)?;
        Ok(self.push_op(
            v,
            Op::BatchNorm(BnSaved {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            }),
            &[x, gamma, beta],
        ))
    }
}

pub(crate) fn batch_norm_backward<'a>(
    s: &BnSaved,
    g: &Tensor,
    val: &dyn Fn(Var) -> &'a Tensor,
) -> Vec<(Var, Tensor)> {
    let shape = s.xhat.shape();
    let (n, c, inner) = bn_dims(shape).expect("checked in forward");
    let m = (n * inner) as f64;
    let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;
    let (gd, xh) = (g.data(), s.xhat.data());
    let gamma = val(s.gamma).data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; gd.len()];
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for b in 0..n {
            for i in 0..inner {
                let k = idx(b, ch, i);
                sg += gd[k];
                sgx += gd[k] * xh[k];
            }
        }
        dgamma[ch] = sgx;
        dbeta[ch] = sg;
        let scale = gamma[ch] * s.inv_std[ch];
        for b in 0..n {
            for i in 0..inner {
                let k = idx(b, ch, i);
                dx[k] = if s.train {
                    scale * (gd[k] - sg / m - xh[k] * sgx / m)
                } else {
                    scale * gd[k]
                };
            }
        }
    }
    vec![
        (s.x, Tensor::from_vec(shape, dx).expect("shape")),
        (s.gamma, Tensor::from_vec(&[c], dgamma).expect("shape")),
        (s.beta, Tensor::from_vec(&[c], dbeta).expect("shape")),
    ]
}
