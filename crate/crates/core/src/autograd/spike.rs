//! Heaviside spike with Atan surrogate gradient, and the fused multi-step
//! PLIF neuron.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::elementwise::sigmoid;
use super::{ActivationKind, Graph, Op, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Surrogate gradient used in place of the Heaviside derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    /// Slope of the arctangent surrogate.
    pub alpha: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

impl SurrogateSpec {
    pub fn atan(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return invalid(format!("surrogate alpha must be positive, got {alpha}"));
        }
        Ok(Self { alpha })
    }
}

/// Largest leak factor; keeps `tau = 1/k` strictly above 1 in f64.
pub const MAX_LEAK: f64 = 1.0 - f64::EPSILON;

/// Leak factor `k = sigmoid(w) = 1/tau`, capped at [`MAX_LEAK`].
pub fn plif_leak(w: f64) -> f64 {
    sigmoid(w).min(MAX_LEAK)
}

/// `alpha / (2 (1 + (pi/2 alpha x)^2))`
pub fn atan_surrogate_grad(x: f64, alpha: f64) -> f64 {
    let u = FRAC_PI_2 * alpha * x;
    alpha / (2.0 * (1.0 + u * u))
}

/// Smooth step whose derivative is [`atan_surrogate_grad`].
pub fn atan_surrogate_primitive(x: f64, alpha: f64) -> f64 {
    (FRAC_PI_2 * alpha * x).atan() / PI + 0.5
}

fn fire(x: f64, spec: SurrogateSpec, smooth: bool) -> f64 {
    if smooth {
        atan_surrogate_primitive(x, spec.alpha)
    } else if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Constants of a PLIF neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlifParams {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub surrogate: SurrogateSpec,
}

impl Default for PlifParams {
    fn default() -> Self {
        Self {
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate: SurrogateSpec::default(),
        }
    }
}

pub struct PlifOutput {
    pub spikes: Var,
    /// Membrane potential after the last step, detached from the graph.
    pub final_v: Tensor,
}

#[derive(Debug)]
pub(crate) struct PlifSaved {
    x: Var,
    w: Var,
    steps: usize,
    params: PlifParams,
    smooth: bool,
    h: Vec<f64>,
    v_prev: Vec<f64>,
}

impl Graph {
    /// Heaviside firing: 1 where `x >= 0`, else 0. Backward uses the Atan
    /// surrogate derivative.
    pub fn spike(&mut self, x: Var, spec: SurrogateSpec) -> Var {
        let smooth = self.smooth_spikes();
        let v = self.value(x).map(|u| fire(u, spec, smooth));
        let out = self.push_op(
            v,
            Op::Spike { input: x, spec },
            &[x],
        );
        self.mark_activation(out, ActivationKind::Spike);
        out
    }

    /// Run a PLIF layer over `steps` time steps in one node.
    ///
    /// `x` is time-major `[steps * N, ...]`; `w` is the single learnable
    /// parameter with `1/tau = sigmoid(w)`. `init_v` (shape `[N, ...]`) is the
    /// carried-over membrane state, or `None` to start at `v_reset`.
    ///
    /// Per step: `H = V + k (X - (V - v_reset))`, `S = spike(H - v_th)`,
    /// `V = H (1 - S) + v_reset S`, with `k = sigmoid(w)`.
    pub fn plif_sequence(
        &mut self,
        x: Var,
        w: Var,
        steps: usize,
        init_v: Option<&Tensor>,
        params: PlifParams,
    ) -> Result<PlifOutput> {
        let shape = self.shape(x).to_vec();
        if steps == 0 || shape.is_empty() || shape[0] % steps != 0 {
            return shape_err(format!("leading axis of {shape:?} is not a multiple of {steps} steps"));
        }
        if self.value(w).numel() != 1 {
            return shape_err("PLIF parameter must be a scalar");
        }
        let per_step = self.value(x).numel() / steps;
        let mut step_shape = shape.clone();
        step_shape[0] /= steps;
        if let Some(v0) = init_v {
            if v0.shape() != step_shape.as_slice() {
                return Err(Error::StateShape {
                    expected: v0.shape().to_vec(),
                    got: step_shape,
                });
            }
        }
        let smooth = self.smooth_spikes();
        let k = plif_leak(self.value(w).data()[0]);
        let xs = self.value(x).data();
        let mut v = match init_v {
            Some(t) => t.data().to_vec(),
            None => vec![params.v_reset; per_step],
        };
        let n = xs.len();
        let mut h = vec![0.0; n];
        let mut v_prev = vec![0.0; n];
        let mut s = vec![0.0; n];
        for t in 0..steps {
            let base = t * per_step;
            for i in 0..per_step {
                let vp = v[i];
                let hv = vp + k * (xs[base + i] - (vp - params.v_reset));
                let sv = fire(hv - params.v_threshold, params.surrogate, smooth);
                v_prev[base + i] = vp;
                h[base + i] = hv;
                s[base + i] = sv;
                v[i] = hv * (1.0 - sv) + params.v_reset * sv;
            }
        }
        let out = Tensor::from_vec(&shape, s)?;
        let spikes = self.push_op(
            out,
            Op::Plif(PlifSaved {
                x,
                w,
                steps,
                params,
                smooth,
                h,
                v_prev,
            }),
            &[x, w],
        );
        self.mark_activation(spikes, ActivationKind::Spike);
        Ok(PlifOutput {
            spikes,
            final_v: Tensor::from_vec(&step_shape, v)?,
        })
    }
}

pub(crate) fn plif_backward<'a>(
    s: &PlifSaved,
    g: &Tensor,
    val: &dyn Fn(Var) -> &'a Tensor,
) -> Vec<(Var, Tensor)> {
    let xt = val(s.x);
    let wv = val(s.w).data()[0];
    let k = plif_leak(wv);
    let xs = xt.data();
    let gd = g.data();
    let n = xs.len();
    let per_step = n / s.steps;
    let p = s.params;
    let alpha = p.surrogate.alpha;
    let mut gx = vec![0.0; n];
    let mut gv = vec![0.0; per_step];
    let mut gk = 0.0;
    for t in (0..s.steps).rev() {
        let base = t * per_step;
        for i in 0..per_step {
            let j = base + i;
            let hv = s.h[j];
            let u = hv - p.v_threshold;
            let sv = fire(u, p.surrogate, s.smooth);
            let sg = atan_surrogate_grad(u, alpha);
            let dv_dh = (1.0 - sv) + (p.v_reset - hv) * sg;
            let gh = gd[j] * sg + gv[i] * dv_dh;
            gx[j] = gh * k;
            gk += gh * (xs[j] - s.v_prev[j] + p.v_reset);
            gv[i] = gh * (1.0 - k);
        }
    }
    let gw = gk * k * (1.0 - k);
    vec![
        (s.x, Tensor::from_vec(xt.shape(), gx).expect("shape")),
        (s.w, Tensor::scalar(gw)),
    ]
}
