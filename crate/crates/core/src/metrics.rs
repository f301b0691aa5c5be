//! Firing rates, AC/MAC operation counts and the energy model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{OpKind, OpRecord};
use crate::snn::Neurons;

/// Energy of one accumulate, joules.
pub const E_AC: f64 = 0.9e-12;
/// Energy of one multiply-accumulate, joules.
pub const E_MAC: f64 = 4.6e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub name: String,
    pub spikes: u64,
    pub slots: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringReport {
    pub layers: Vec<LayerRate>,
    /// Total spikes over total slots.
    pub overall: f64,
}

/// Rates from the neuron counters accumulated since the last reset.
pub fn firing_rate<N: Neurons + ?Sized>(net: &N) -> Result<FiringReport> {
    let mut layers = Vec::new();
    let (mut spikes, mut slots) = (0u64, 0u64);
    for n in net.all_neurons() {
        let c = n.counter();
        spikes += c.spikes;
        slots += c.slots;
        if let Some(rate) = c.rate() {
            layers.push(LayerRate {
                name: n.name.clone(),
                spikes: c.spikes,
                slots: c.slots,
                rate,
            });
        }
    }
    if slots == 0 {
        return Err(Error::NoForwardPass);
    }
    Ok(FiringReport {
        layers,
        overall: spikes as f64 / slots as f64,
    })
}

/// Per-sample, per-time-step operation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCount {
    pub n_ac: f64,
    pub n_mac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub name: String,
    pub kind: OpKind,
    pub shape: Vec<usize>,
    pub n_ac: f64,
    pub n_mac: f64,
    pub rate: Option<f64>,
}

/// Synaptic operations are accumulates when the input is binary and
/// multiply-accumulates otherwise; BN and SEW additions are always MACs.
pub fn is_accumulate(rec: &OpRecord) -> bool {
    match rec.kind {
        OpKind::Conv | OpKind::ConvTranspose | OpKind::Linear => rec.spiking_input,
        OpKind::BatchNorm | OpKind::SewAdd => false,
    }
}

/// Counts from a profiled pass over `batch` samples and `steps` time steps.
pub fn layer_ops(records: &[OpRecord], steps: usize, batch: usize) -> Result<Vec<LayerOps>> {
    if steps == 0 || batch == 0 {
        return invalid("operation counts need positive steps and batch");
    }
    if records.is_empty() {
        return Err(Error::NoForwardPass);
    }
    let div = (steps * batch) as f64;
    Ok(records
        .iter()
        .map(|r| {
            let n = r.ops as f64 / div;
            let ac = is_accumulate(r);
            LayerOps {
                name: r.name.clone(),
                kind: r.kind,
                shape: r.out_shape.clone(),
                n_ac: if ac { n } else { 0.0 },
                n_mac: if ac { 0.0 } else { n },
                rate: None,
            }
        })
        .collect())
}

pub fn count_ops(records: &[OpRecord], steps: usize, batch: usize) -> Result<OpCount> {
    Ok(layer_ops(records, steps, batch)?
        .iter()
        .fold(OpCount::default(), |acc, l| OpCount {
            n_ac: acc.n_ac + l.n_ac,
            n_mac: acc.n_mac + l.n_mac,
        }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub steps: usize,
    pub firing_rate: f64,
    pub e_snn: f64,
    pub e_mac_part: f64,
    pub total: f64,
    pub e_ac_const: f64,
    pub e_mac_const: f64,
}

/// `E_snn = T fr E_AC N_AC` and `E_mac = T E_MAC N_MAC`, in joules.
pub fn energy(steps: usize, fr: f64, counts: OpCount) -> Result<EnergyReport> {
    if !(0.0..=1.0).contains(&fr) {
        return invalid(format!("firing rate {fr} outside [0, 1]"));
    }
    let t = steps as f64;
    let e_snn = t * fr * E_AC * counts.n_ac;
    let e_mac_part = t * E_MAC * counts.n_mac;
    Ok(EnergyReport {
        steps,
        firing_rate: fr,
        e_snn,
        e_mac_part,
        total: e_snn + e_mac_part,
        e_ac_const: E_AC,
        e_mac_const: E_MAC,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub layers: Vec<LayerOps>,
    pub totals: OpCount,
    pub firing: FiringReport,
    pub energy: EnergyReport,
}

fn block_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(p, _)| p)
}

/// Join operation counts with firing rates; each layer takes the rate of the
/// neuron in the same block.
pub fn profile_report(records: &[OpRecord], steps: usize, batch: usize, firing: FiringReport) -> Result<ProfileReport> {
    let rates: HashMap<&str, f64> = firing.layers.iter().map(|l| (block_of(&l.name), l.rate)).collect();
    let mut layers = layer_ops(records, steps, batch)?;
    for l in &mut layers {
        l.rate = rates.get(block_of(&l.name)).copied();
    }
    let totals = count_ops(records, steps, batch)?;
    let energy = energy(steps, firing.overall, totals)?;
    Ok(ProfileReport {
        layers,
        totals,
        firing,
        energy,
    })
}
