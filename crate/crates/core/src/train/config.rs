use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::Decode;
use crate::error::{Error, Result};
use crate::events::Scenario;
use crate::losses::LossKind;
use crate::snn::{FusionMode, SpesVariant};

/// Synthetic dataset and encoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub scenario: Scenario,
    pub train_samples: usize,
    pub test_samples: usize,
    pub width: u16,
    pub height: u16,
    /// Window length, microseconds.
    pub duration: u64,
    /// Events per microsecond.
    pub rate: f64,
    pub noise: f64,
    pub t_bins: usize,
    pub micro_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub classes: usize,
    pub fusion: FusionMode,
    pub spes: SpesVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub decode: Decode,
    pub loss: LossKind,
    pub flip_prob: f64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub data: DataSpec,
    pub model: ModelSpec,
}

/// Short names accepted by [`TrainConfig::set`].
const ALIASES: &[(&str, &str)] = &[
    ("batch", "batch_size"),
    ("fusion", "model.fusion"),
    ("spes", "model.spes"),
    ("classes", "model.classes"),
    ("noise", "data.noise"),
    ("rate", "data.rate"),
    ("train_samples", "data.train_samples"),
    ("test_samples", "data.test_samples"),
    ("samples", "data.train_samples"),
    ("scenario", "data.scenario"),
    ("t_bins", "data.t_bins"),
    ("micro_bins", "data.micro_bins"),
    ("duration", "data.duration"),
];

impl TrainConfig {
    /// Two-class bar orientation task, 32x32, T=5, n=2.
    pub fn toy_classification() -> Self {
        Self {
            epochs: 6,
            batch_size: 8,
            lr: 0.02,
            lr_min: 0.0,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            decode: Decode::Rate,
            loss: LossKind::Mse,
            flip_prob: 0.0,
            eval_every: 1,
            data: DataSpec {
                scenario: Scenario::MovingBar,
                train_samples: 160,
                test_samples: 80,
                width: 32,
                height: 32,
                duration: 100_000,
                rate: 0.005,
                noise: 0.7,
                t_bins: 5,
                micro_bins: 2,
            },
            model: ModelSpec {
                classes: 2,
                fusion: FusionMode::None,
                spes: SpesVariant::ResEnhanced,
            },
        }
    }

    /// Moving-square detection, 64x64, T=5, n=2.
    pub fn toy_detection() -> Self {
        Self {
            epochs: 12,
            batch_size: 8,
            lr: 0.01,
            flip_prob: 0.5,
            eval_every: 4,
            data: DataSpec {
                scenario: Scenario::MovingSquare,
                train_samples: 160,
                test_samples: 64,
                width: 64,
                height: 64,
                rate: 0.02,
                noise: 0.1,
                ..Self::toy_classification().data
            },
            model: ModelSpec {
                classes: 1,
                fusion: FusionMode::Three,
                spes: SpesVariant::ResEnhanced,
            },
            ..Self::toy_classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return bad(format!("need 0 <= lr_min <= lr and lr > 0, got {} / {}", self.lr_min, self.lr));
        }
        if !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("grad_clip must be positive and weight_decay non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        let d = &self.data;
        if d.train_samples == 0 || d.t_bins == 0 || d.micro_bins == 0 || d.duration == 0 {
            return bad("samples, t_bins, micro_bins and duration must be positive".into());
        }
        if d.width == 0 || d.height == 0 {
            return bad("sensor must have positive area".into());
        }
        if self.model.classes == 0 {
            return bad("classes must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Override one field by dotted path or alias. Values are read as TOML
    /// literals, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| *full);
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        // integers given where floats live stay floats
        *slot = match (&*slot, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::String(_), toml::Value::Integer(i)) => toml::Value::String(i.to_string()),
            (_, p) => p,
        };
        let next: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}={value}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}
