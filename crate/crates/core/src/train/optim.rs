use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(param: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, p: &AdamWParams) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() {
        return shape_err(format!(
            "adamw: {} params, {} grads, {} moments",
            param.len(),
            grad.len(),
            state.m.len()
        ));
    }
    state.step += 1;
    let c1 = 1.0 - p.beta1.powi(state.step as i32);
    let c2 = 1.0 - p.beta2.powi(state.step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        param[i] -= lr * (mh / (vh.sqrt() + p.eps) + p.weight_decay * param[i]);
    }
    Ok(())
}

/// AdamW over every trainable tensor of a store.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub params: AdamWParams,
    states: Vec<Option<AdamState>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, params: AdamWParams) -> Self {
        let states = store
            .entries()
            .iter()
            .map(|e| e.trainable.then(|| AdamState::new(e.value.numel())))
            .collect();
        Self { params, states }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for (e, s) in store.entries_mut().iter_mut().zip(&mut self.states) {
            if let Some(s) = s {
                let grad = e.grad.data().to_vec();
                adamw_step(e.value.data_mut(), &grad, s, lr, &self.params)?;
            }
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Scale every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// [`clip_grad_norm`] over the trainable gradients of a store.
pub fn clip_store_grads(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut grads: Vec<&mut Tensor> = store
        .entries_mut()
        .iter_mut()
        .filter(|e| e.trainable)
        .map(|e| &mut e.grad)
        .collect();
    clip_grad_norm(&mut grads, max_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_examples() {
        let p = AdamWParams {
            weight_decay: 0.0,
            ..AdamWParams::default()
        };
        let mut w = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut w, &[0.0, 0.0], &mut s, 0.1, &p).unwrap();
        assert_eq!(w, vec![0.3, -2.0]);

        let mut w = vec![0.5];
        let mut s = AdamState::new(1);
        adamw_step(&mut w, &[1.0], &mut s, 0.1, &p).unwrap();
        // m_hat = 1, v_hat = 1
        assert!((w[0] - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);

        let mut wd = vec![0.5];
        let mut s = AdamState::new(1);
        let pd = AdamWParams {
            weight_decay: 0.01,
            ..p
        };
        adamw_step(&mut wd, &[1.0], &mut s, 0.1, &pd).unwrap();
        assert!((wd[0] - (w[0] - 0.1 * 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut w = vec![1.0, 2.0, 3.0];
        let mut s = AdamState::new(3);
        adamw_step(&mut w, &[0.4, -1.0, 9.0], &mut s, 0.0, &AdamWParams::default()).unwrap();
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 0.1, 0.0), 0.1);
        assert!(cosine_lr(100, 100, 0.1, 0.01) - 0.01 < 1e-18);
        assert!((cosine_lr(50, 100, 0.1, 0.02) - 0.06).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for s in 0..=37 {
            let v = cosine_lr(s, 37, 5e-3, 1e-4);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn clip_examples() {
        let mut a = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let n = clip_grad_norm(&mut [&mut a], 1.0);
        assert_eq!(n, 5.0);
        assert!((a.data()[0] - 0.6).abs() < 1e-15 && (a.data()[1] - 0.8).abs() < 1e-15);
        let mut b = Tensor::from_vec(&[2], vec![0.3, 0.4]).unwrap();
        clip_grad_norm(&mut [&mut b], 1.0);
        assert_eq!(b.data(), &[0.3, 0.4]);
    }
}
