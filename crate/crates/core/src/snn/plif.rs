use crate::autograd::{plif_leak, PlifParams, Var, MAX_LEAK};
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Spikes emitted and neuron-slots (`neurons x time steps`) observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpikeCounter {
    pub spikes: u64,
    pub slots: u64,
}

impl SpikeCounter {
    pub fn rate(&self) -> Option<f64> {
        (self.slots > 0).then(|| self.spikes as f64 / self.slots as f64)
    }
}

/// Parametric leaky integrate-and-fire layer with one learnable time constant,
/// `1/tau = sigmoid(w)`, and hard reset.
#[derive(Debug, Clone)]
pub struct PlifNeuron {
    pub name: String,
    pub w: ParamId,
    pub params: PlifParams,
    state: Option<Tensor>,
    step_state: Option<Var>,
    counter: SpikeCounter,
}

impl PlifNeuron {
    /// `w = 0` gives `tau = 2`.
    pub fn new(store: &mut ParamStore, name: &str, params: PlifParams) -> Self {
        Self::with_tau(store, name, params, 2.0)
    }

    pub fn with_tau(store: &mut ParamStore, name: &str, params: PlifParams, tau: f64) -> Self {
        assert!(tau > 1.0, "PLIF time constant must exceed 1");
        // sigmoid(w) = 1/tau
        let w0 = -(tau - 1.0).ln();
        let w = store.add(format!("{name}.w"), Tensor::scalar(w0));
        Self {
            name: name.to_string(),
            w,
            params,
            state: None,
            step_state: None,
            counter: SpikeCounter::default(),
        }
    }

    pub fn tau(&self, store: &ParamStore) -> f64 {
        1.0 / plif_leak(store.value(self.w).data()[0])
    }

    pub fn counter(&self) -> SpikeCounter {
        self.counter
    }

    /// Membrane potential carried between calls, if any.
    pub fn membrane(&self) -> Option<&Tensor> {
        self.state.as_ref()
    }

    /// Clear the membrane and the spike counters.
    pub fn reset_state(&mut self) {
        self.reset_membrane();
        self.counter = SpikeCounter::default();
    }

    /// Clear the membrane only.
    pub fn reset_membrane(&mut self) {
        self.state = None;
        self.step_state = None;
    }

    fn count(&mut self, spikes: &Tensor) {
        self.counter.spikes += spikes.data().iter().filter(|&&s| s >= 0.5).count() as u64;
        self.counter.slots += spikes.numel() as u64;
    }

    /// Run all `ctx.steps` time steps of a time-major input `[T*N, ...]`.
    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let out = ctx
            .graph
            .plif_sequence(x, w, ctx.steps, self.state.as_ref(), self.params)?;
        self.state = Some(out.final_v);
        let spikes = ctx.graph.value(out.spikes).clone();
        self.count(&spikes);
        Ok(out.spikes)
    }

    /// Advance one time step built from primitive graph ops.
    ///
    /// Charge `H = V + k (X - (V - v_reset))`, fire `S = spike(H - v_th)`,
    /// hard reset `V = H (1 - S) + v_reset S`, with `k = sigmoid(w)`.
    pub fn step(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        let v = match self.step_state {
            Some(v) => {
                if ctx.graph.shape(v) != shape.as_slice() {
                    return Err(Error::StateShape {
                        expected: ctx.graph.shape(v).to_vec(),
                        got: shape,
                    });
                }
                v
            }
            None => ctx.graph.input(Tensor::full(&shape, self.params.v_reset)),
        };
        let p = self.params;
        let w = ctx.param(self.w);
        let g = &mut ctx.graph;
        let k = g.sigmoid(w);
        let k = g.clamp(k, 0.0, MAX_LEAK);
        let v_rel = g.add_scalar(v, -p.v_reset);
        let drive = g.sub(x, v_rel)?;
        let charge = g.scalar_mul(drive, k)?;
        let h = g.add(v, charge)?;
        let u = g.add_scalar(h, -p.v_threshold);
        let s = g.spike(u, p.surrogate);
        let not_s = g.scale(s, -1.0);
        let not_s = g.add_scalar(not_s, 1.0);
        let kept = g.mul(h, not_s)?;
        let reset = g.scale(s, p.v_reset);
        let v_next = g.add(kept, reset)?;
        self.step_state = Some(v_next);
        let spikes = g.value(s).clone();
        self.count(&spikes);
        Ok(s)
    }
}

/// Anything that owns PLIF neurons.
pub trait Neurons {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>);
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>);

    fn all_neurons(&self) -> Vec<&PlifNeuron> {
        let mut v = Vec::new();
        self.neurons(&mut v);
        v
    }

    /// Reset every membrane and counter.
    fn reset_state(&mut self) {
        let mut v = Vec::new();
        self.neurons_mut(&mut v);
        v.into_iter().for_each(PlifNeuron::reset_state);
    }

    /// Reset every membrane, keeping counters.
    fn reset_membranes(&mut self) {
        let mut v = Vec::new();
        self.neurons_mut(&mut v);
        v.into_iter().for_each(PlifNeuron::reset_membrane);
    }
}

impl Neurons for PlifNeuron {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        out.push(self);
    }

    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        out.push(self);
    }
}

impl<T: Neurons> Neurons for Vec<T> {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.iter().for_each(|m| m.neurons(out));
    }

    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.iter_mut().for_each(|m| m.neurons_mut(out));
    }
}

impl<T: Neurons> Neurons for Option<T> {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        if let Some(m) = self {
            m.neurons(out);
        }
    }

    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        if let Some(m) = self {
            m.neurons_mut(out);
        }
    }
}
