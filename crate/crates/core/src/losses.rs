//! Classification losses on decoded outputs, their closed-form gradients,
//! focal loss, and the SSD multibox objective.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    Ce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "ce" => Ok(LossKind::Ce),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

/// One-hot rows `[N, C]`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut d = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return invalid(format!("label {l} outside {classes} classes"));
        }
        d[i * classes + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), classes], d)
}

fn check_pair(g: &Graph, a: Var, y: &Tensor) -> Result<usize> {
    if g.shape(a) != y.shape() || y.ndim() != 2 {
        return shape_err(format!("decoded {:?} vs targets {:?}", g.shape(a), y.shape()));
    }
    Ok(y.shape()[0].max(1))
}

/// `(1/N) sum_ij (y_ij - a_ij)^2`.
pub fn mse_loss(g: &mut Graph, decoded: Var, targets: &Tensor) -> Result<Var> {
    let n = check_pair(g, decoded, targets)?;
    let diff = g.add_const(decoded, &targets.map(|v| -v))?;
    let sq = g.powf(diff, 2.0);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n as f64))
}

/// `-(1/N) sum_ij y_ij log softmax(a_i)_j`.
pub fn ce_loss(g: &mut Graph, decoded: Var, targets: &Tensor) -> Result<Var> {
    let n = check_pair(g, decoded, targets)?;
    let ls = g.log_softmax(decoded, 1)?;
    let picked = g.mul_const(ls, targets)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / n as f64))
}

pub fn class_loss(g: &mut Graph, kind: LossKind, decoded: Var, targets: &Tensor) -> Result<Var> {
    match kind {
        LossKind::Mse => mse_loss(g, decoded, targets),
        LossKind::Ce => ce_loss(g, decoded, targets),
    }
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `d MSE / d a_j = 2 (a_j - y_j)` for a single sample.
pub fn mse_grad_analytic(decoded: &[f64], targets: &[f64]) -> Vec<f64> {
    decoded.iter().zip(targets).map(|(a, y)| 2.0 * (a - y)).collect()
}

/// `d CE / d a_j = z_j - y_j` with `z = softmax(a)`, for a single sample.
pub fn ce_grad_analytic(decoded: &[f64], targets: &[f64]) -> Vec<f64> {
    softmax(decoded).iter().zip(targets).map(|(z, y)| z - y).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(gamma >= 0.0) {
            return invalid(format!("focal parameters alpha={alpha} gamma={gamma} out of range"));
        }
        Ok(Self { alpha, gamma })
    }
}

pub const FOCAL_EPS: f64 = 1e-7;

/// Mean of `-alpha_t (1 - p_t)^gamma ln p_t` over samples.
pub fn focal_loss(probs: &[f64], labels: &[u8], params: FocalParams) -> Result<f64> {
    if probs.len() != labels.len() {
        return shape_err(format!("{} probabilities vs {} labels", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            let (pt, at) = if y == 1 { (p, params.alpha) } else { (1.0 - p, 1.0 - params.alpha) };
            -at * (1.0 - pt).powf(params.gamma) * pt.ln()
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Dense per-anchor targets for [`ssd_multibox_loss`].
#[derive(Debug, Clone)]
pub struct MultiboxTargets {
    /// One-hot class targets `[N, A, K]`; all zero for background.
    pub cls: Tensor,
    /// 1 where the anchor contributes to classification, 0 where ignored.
    pub cls_weight: Tensor,
    /// Encoded offsets `[N, A, 4]`, zero off the positives.
    pub boxes: Tensor,
    /// 1 on positive anchors `[N, A, 4]`.
    pub box_mask: Tensor,
    pub num_pos: usize,
}

pub struct MultiboxLoss {
    pub total: Var,
    pub cls: Var,
    pub loc: Var,
}

/// Sigmoid focal classification over non-ignored anchors plus smooth-L1
/// regression over positives, both divided by `max(1, num_pos)`.
pub fn ssd_multibox_loss(
    g: &mut Graph,
    cls_logits: Var,
    box_preds: Var,
    targets: &MultiboxTargets,
    focal: FocalParams,
    beta: f64,
) -> Result<MultiboxLoss> {
    if g.shape(cls_logits) != targets.cls.shape() || g.shape(box_preds) != targets.boxes.shape() {
        return shape_err(format!(
            "head outputs {:?}/{:?} vs targets {:?}/{:?}",
            g.shape(cls_logits),
            g.shape(box_preds),
            targets.cls.shape(),
            targets.boxes.shape()
        ));
    }
    let norm = 1.0 / targets.num_pos.max(1) as f64;
    let y = &targets.cls;
    // p_t = (2y - 1) p + (1 - y)
    let p = g.sigmoid(cls_logits);
    let signed = g.mul_const(p, &y.map(|v| 2.0 * v - 1.0))?;
    let pt = g.add_const(signed, &y.map(|v| 1.0 - v))?;
    let pt = g.clamp(pt, FOCAL_EPS, 1.0 - FOCAL_EPS);
    let q = g.scale(pt, -1.0);
    let q = g.add_scalar(q, 1.0);
    let mod_factor = g.powf(q, focal.gamma);
    let lp = g.ln(pt);
    let term = g.mul(mod_factor, lp)?;
    let weight = y.zip_map(&targets.cls_weight, |yv, w| {
        -w * (yv * focal.alpha + (1.0 - yv) * (1.0 - focal.alpha))
    })?;
    let weighted = g.mul_const(term, &weight)?;
    let cls_sum = g.sum(weighted);
    let cls = g.scale(cls_sum, norm);

    let diff = g.add_const(box_preds, &targets.boxes.map(|v| -v))?;
    let masked = g.mul_const(diff, &targets.box_mask)?;
    let sl = g.smooth_l1(masked, beta);
    let loc_sum = g.sum(sl);
    let loc = g.scale(loc_sum, norm);
    let total = g.add(cls, loc)?;
    Ok(MultiboxLoss { total, cls, loc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let y = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let a = g.leaf(Tensor::from_vec(&[1, 2], vec![0.2, 0.8]).unwrap());
        let l = mse_loss(&mut g, a, &y).unwrap();
        assert!(close(g.value(l).data()[0], 0.08, 1e-15));
        let b = g.leaf(y.clone());
        let z = mse_loss(&mut g, b, &y).unwrap();
        assert_eq!(g.value(z).data()[0], 0.0);
        assert_eq!(mse_grad_analytic(&[0.2, 1.0], &[0.0, 1.0]), vec![0.4, 0.0]);
    }

    #[test]
    fn ce_examples() {
        let mut g = Graph::new();
        let y = one_hot(&[1], 3).unwrap();
        let a = g.leaf(Tensor::full(&[1, 3], 0.7));
        let l = ce_loss(&mut g, a, &y).unwrap();
        assert!(close(g.value(l).data()[0], 3f64.ln(), 1e-12));
        let z = softmax(&[0.2, 0.8]);
        assert!(close(z[0], 0.3543, 1e-4) && close(z[1], 0.6457, 1e-4));
        let gr = ce_grad_analytic(&[0.5, 0.5], &[0.0, 1.0]);
        assert!(close(gr[0], 0.5, 1e-15) && close(gr[1], -0.5, 1e-15));
        let gr = ce_grad_analytic(&[0.2, 1.0], &[0.0, 1.0]);
        assert!(close(gr[0], 0.3100, 1e-4));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        assert!(mse_loss(&mut g, a, &Tensor::zeros(&[2, 2])).is_err());
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn focal_examples() {
        let v = focal_loss(&[0.9], &[1], FocalParams::default()).unwrap();
        assert!(close(v, -0.25 * 0.01 * 0.9f64.ln(), 1e-15));
        assert!(close(v, 2.634e-4, 1e-7));
        let probs = [0.1, 0.7, 0.4, 0.95];
        let labels = [0u8, 1, 1, 0];
        let half = focal_loss(&probs, &labels, FocalParams::new(0.5, 0.0).unwrap()).unwrap();
        let bce: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| if y == 1 { -f64::ln(p) } else { -f64::ln(1.0 - p) })
            .sum::<f64>()
            / 4.0;
        assert!(close(half, 0.5 * bce, 1e-14));
        assert!(FocalParams::new(1.5, 2.0).is_err());
    }

    #[test]
    fn focal_decreases_in_pt() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let v = focal_loss(&[p], &[1], FocalParams::default()).unwrap();
            assert!(v < last);
            last = v;
        }
    }
}
