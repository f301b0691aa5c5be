//! Spike decoding: count, rate and membrane accumulation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decode {
    Count,
    Rate,
    Membrane,
}

impl fmt::Display for Decode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decode::Count => "count",
            Decode::Rate => "rate",
            Decode::Membrane => "membrane",
        })
    }
}

impl FromStr for Decode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Decode::Count),
            "rate" => Ok(Decode::Rate),
            "membrane" => Ok(Decode::Membrane),
            _ => Err(Error::Config(format!("unknown decode strategy {s:?}"))),
        }
    }
}

fn split_time(t: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
    let Some((&steps, rest)) = t.shape().split_first() else {
        return shape_err("spike train needs a time axis");
    };
    if steps == 0 {
        return invalid("spike train needs at least one step");
    }
    let rest = if rest.is_empty() { vec![1] } else { rest.to_vec() };
    Ok((steps, rest.iter().product(), rest))
}

/// Sum over the leading time axis of `[T, ...]`.
pub fn decode_count(train: &Tensor) -> Result<Tensor> {
    let (steps, per, rest) = split_time(train)?;
    let d = train.data();
    let out = (0..per).map(|i| (0..steps).map(|t| d[t * per + i]).sum()).collect();
    Tensor::from_vec(&rest, out)
}

/// `decode_count / T`.
pub fn decode_rate(train: &Tensor) -> Result<Tensor> {
    let steps = split_time(train)?.0 as f64;
    Ok(decode_count(train)?.map(|v| v / steps))
}

/// Final membrane potential of a non-firing leaky integrator driven by
/// `currents: [T, ...]`: `V <- V + (X - (V - v_reset)) / tau`.
pub fn decode_membrane(currents: &Tensor, tau: f64, v_reset: f64) -> Result<Tensor> {
    if !(tau >= 1.0) {
        return invalid(format!("membrane time constant {tau} below 1"));
    }
    let (steps, per, rest) = split_time(currents)?;
    let d = currents.data();
    let mut v = vec![v_reset; per];
    for t in 0..steps {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi += (d[t * per + i] - (*vi - v_reset)) / tau;
        }
    }
    Tensor::from_vec(&rest, v)
}

impl Graph {
    /// Count decode of a time-major `[T*N, ...]` tensor, giving `[N, ...]`.
    pub fn decode_count(&mut self, x: Var, steps: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if steps == 0 || shape.is_empty() || shape[0] % steps != 0 {
            return shape_err(format!("{shape:?} is not time-major over {steps} steps"));
        }
        let mut split = vec![steps];
        split.extend_from_slice(&shape);
        split[1] /= steps;
        let r = self.reshape(x, &split)?;
        self.sum_axis(r, 0)
    }

    pub fn decode_rate(&mut self, x: Var, steps: usize) -> Result<Var> {
        let c = self.decode_count(x, steps)?;
        Ok(self.scale(c, 1.0 / steps as f64))
    }

    /// Non-firing leaky accumulation over a time-major `[T*N, ...]` tensor.
    pub fn decode_membrane(&mut self, x: Var, steps: usize, tau: f64, v_reset: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if steps == 0 || shape.is_empty() || shape[0] % steps != 0 {
            return shape_err(format!("{shape:?} is not time-major over {steps} steps"));
        }
        if !(tau >= 1.0) {
            return invalid(format!("membrane time constant {tau} below 1"));
        }
        let n = shape[0] / steps;
        let k = 1.0 / tau;
        let mut v: Option<Var> = None;
        for t in 0..steps {
            let xt = self.slice(x, 0, t * n, n)?;
            let drive = self.scale(xt, k);
            v = Some(match v {
                // V + k (X - V + v_reset) = (1 - k) V + k X + k v_reset
                Some(prev) => {
                    let kept = self.scale(prev, 1.0 - k);
                    let s = self.add(kept, drive)?;
                    self.add_scalar(s, k * v_reset)
                }
                None => self.add_scalar(drive, v_reset),
            });
        }
        Ok(v.expect("at least one step"))
    }

    pub fn decode(&mut self, strategy: Decode, x: Var, steps: usize) -> Result<Var> {
        match strategy {
            Decode::Count => self.decode_count(x, steps),
            Decode::Rate => self.decode_rate(x, steps),
            Decode::Membrane => self.decode_membrane(x, steps, 2.0, 0.0),
        }
    }
}

/// Index of the largest entry; ties resolve to the first.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
