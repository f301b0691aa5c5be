//! Multi-scale spiking fusion: per-scale deconvolution branches, channel
//! concatenation, and pyramid re-extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{ConvBnPlif, DeconvBlock, SewResBlock, SpikingDenseEnh};
use super::plif::{Neurons, PlifNeuron};
use crate::autograd::{PlifParams, Var};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{Ctx, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpesVariant {
    /// Plain pyramid blocks.
    Basic,
    /// Pyramid blocks each followed by a dense block and a 1x1 re-squeeze.
    DenseEnhanced,
    /// Pyramid blocks each followed by a SEW residual block.
    ResEnhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    /// Indices into the backbone taps.
    pub fuse_layers: Vec<usize>,
    /// Channel width of every deconvolution branch.
    pub fused_channels: usize,
    pub spes_variant: SpesVariant,
    pub pyramid_levels: usize,
    /// Width of pyramid level `k` is `round(fused_channels * decay^k)`.
    pub spes_decay: f64,
    /// Dense-enhancement inner layers and growth rate.
    pub dense_layers: usize,
    pub dense_growth: usize,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            fuse_layers: vec![0, 1, 2],
            fused_channels: 64,
            spes_variant: SpesVariant::ResEnhanced,
            pyramid_levels: 3,
            spes_decay: 1.0,
            dense_layers: 2,
            dense_growth: 8,
        }
    }
}

impl FusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fuse_layers.is_empty() {
            return invalid("fusion needs at least one tap");
        }
        if self.pyramid_levels == 0 {
            return invalid("fusion needs at least one pyramid level");
        }
        if self.fused_channels == 0 || !(self.spes_decay > 0.0) {
            return invalid("fusion widths must be positive");
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        ((self.fused_channels as f64 * self.spes_decay.powi(level as i32)).round() as usize).max(1)
    }
}

#[derive(Debug, Clone)]
pub enum Enhancement {
    None,
    Res(SewResBlock),
    Dense(SpikingDenseEnh),
}

impl Enhancement {
    fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Enhancement::None => Ok(x),
            Enhancement::Res(b) => b.forward(ctx, x),
            Enhancement::Dense(b) => b.forward(ctx, x),
        }
    }
}

impl Neurons for Enhancement {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        match self {
            Enhancement::None => {}
            Enhancement::Res(b) => b.neurons(out),
            Enhancement::Dense(b) => b.neurons(out),
        }
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        match self {
            Enhancement::None => {}
            Enhancement::Res(b) => b.neurons_mut(out),
            Enhancement::Dense(b) => b.neurons_mut(out),
        }
    }
}

/// One pyramid block: optional 3x3 stride-2 down-sampling, 1x1 squeeze,
/// enhancement. Emits its level after the enhancement.
#[derive(Debug, Clone)]
pub struct PyramidBlock {
    pub down: Option<ConvBnPlif>,
    pub squeeze: ConvBnPlif,
    pub enhance: Enhancement,
}

impl Neurons for PyramidBlock {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.down.neurons(out);
        self.squeeze.neurons(out);
        self.enhance.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.down.neurons_mut(out);
        self.squeeze.neurons_mut(out);
        self.enhance.neurons_mut(out);
    }
}

/// Pyramid extraction from the fused map. Level 0 keeps the fused
/// resolution; each further level halves it (ceil).
#[derive(Debug, Clone)]
pub struct Spes {
    pub variant: SpesVariant,
    pub blocks: Vec<PyramidBlock>,
}

impl Spes {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        spec: &FusionSpec,
        params: PlifParams,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::with_capacity(spec.pyramid_levels);
        let mut prev = in_ch;
        for level in 0..spec.pyramid_levels {
            let c = spec.level_channels(level);
            let prefix = format!("{name}.level{level}");
            let down = (level > 0)
                .then(|| ConvBnPlif::new(store, &format!("{prefix}.down"), prev, prev, 3, 2, 1, params, rng));
            let squeeze = ConvBnPlif::new(store, &format!("{prefix}.squeeze"), prev, c, 1, 1, 0, params, rng);
            let enhance = match spec.spes_variant {
                SpesVariant::Basic => Enhancement::None,
                SpesVariant::ResEnhanced => {
                    Enhancement::Res(SewResBlock::new(store, &format!("{prefix}.res"), c, params, rng))
                }
                SpesVariant::DenseEnhanced => Enhancement::Dense(SpikingDenseEnh::new(
                    store,
                    &format!("{prefix}.dense"),
                    c,
                    spec.dense_layers,
                    spec.dense_growth,
                    params,
                    rng,
                )),
            };
            blocks.push(PyramidBlock { down, squeeze, enhance });
            prev = c;
        }
        Self {
            variant: spec.spes_variant,
            blocks,
        }
    }

    pub fn forward(&mut self, ctx: &mut Ctx, fused: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut x = fused;
        for b in &mut self.blocks {
            if let Some(d) = &mut b.down {
                x = d.forward(ctx, x)?;
            }
            x = b.squeeze.forward(ctx, x)?;
            x = b.enhance.forward(ctx, x)?;
            out.push(x);
        }
        Ok(out)
    }

    pub fn sew_blocks(&self) -> impl Iterator<Item = &SewResBlock> {
        self.blocks.iter().filter_map(|b| match &b.enhance {
            Enhancement::Res(r) => Some(r),
            _ => None,
        })
    }

    pub fn sew_blocks_mut(&mut self) -> impl Iterator<Item = &mut SewResBlock> {
        self.blocks.iter_mut().filter_map(|b| match &mut b.enhance {
            Enhancement::Res(r) => Some(r),
            _ => None,
        })
    }
}

impl Neurons for Spes {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.blocks.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.blocks.neurons_mut(out);
    }
}

/// `pyramid(concat(branch_i(tap_i)))`.
#[derive(Debug, Clone)]
pub struct SpikingFusion {
    pub spec: FusionSpec,
    pub branches: Vec<DeconvBlock>,
    pub spes: Spes,
}

impl SpikingFusion {
    /// `taps` gives `(channels, (h, w))` of every backbone tap; branches
    /// target the resolution of the first fused tap.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        spec: &FusionSpec,
        taps: &[(usize, (usize, usize))],
        params: PlifParams,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let selected: Vec<_> = spec
            .fuse_layers
            .iter()
            .map(|&i| {
                taps.get(i)
                    .copied()
                    .ok_or_else(|| crate::error::Error::InvalidArgument(format!("fusion tap {i} does not exist")))
            })
            .collect::<Result<_>>()?;
        let target = selected
            .iter()
            .map(|t| t.1)
            .max_by_key(|&(h, w)| h * w)
            .expect("non-empty");
        let branches = selected
            .iter()
            .enumerate()
            .map(|(b, &(c, hw))| {
                DeconvBlock::new(store, &format!("{name}.branch{b}"), c, spec.fused_channels, hw, target, params, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused_ch = spec.fused_channels * branches.len();
        let spes = Spes::new(store, &format!("{name}.spes"), fused_ch, spec, params, rng);
        Ok(Self {
            spec: spec.clone(),
            branches,
            spes,
        })
    }

    /// Per-scale transforms, one per fused tap.
    pub fn transform(&mut self, ctx: &mut Ctx, taps: &[Var]) -> Result<Vec<Var>> {
        if taps.len() != self.branches.len() {
            return shape_err(format!("fusion expects {} taps, got {}", self.branches.len(), taps.len()));
        }
        self.branches
            .iter_mut()
            .zip(taps)
            .map(|(b, &t)| b.forward(ctx, t))
            .collect()
    }

    /// Channel concatenation of the transformed maps.
    pub fn fuse(&mut self, ctx: &mut Ctx, maps: &[Var]) -> Result<Var> {
        if maps.len() == 1 {
            return Ok(maps[0]);
        }
        ctx.graph.concat(maps, 1)
    }

    pub fn pyramid(&mut self, ctx: &mut Ctx, fused: Var) -> Result<Vec<Var>> {
        self.spes.forward(ctx, fused)
    }

    /// Select the fused taps from all backbone taps and run all three stages.
    pub fn forward(&mut self, ctx: &mut Ctx, all_taps: &[Var]) -> Result<Vec<Var>> {
        let taps: Vec<Var> = self
            .spec
            .fuse_layers
            .iter()
            .map(|&i| all_taps.get(i).copied())
            .collect::<Option<_>>()
            .ok_or_else(|| crate::error::Error::Shape("missing backbone tap".into()))?;
        let maps = self.transform(ctx, &taps)?;
        let fused = self.fuse(ctx, &maps)?;
        self.pyramid(ctx, fused)
    }

    /// Output `(channels, (h, w))` of each pyramid level for a fused map of
    /// size `hw`.
    pub fn level_shapes(&self, hw: (usize, usize)) -> Vec<(usize, (usize, usize))> {
        let mut cur = hw;
        (0..self.spec.pyramid_levels)
            .map(|l| {
                if l > 0 {
                    cur = (cur.0.div_ceil(2), cur.1.div_ceil(2));
                }
                (self.spec.level_channels(l), cur)
            })
            .collect()
    }

    pub fn target_hw(&self) -> (usize, usize) {
        self.branches[0].target
    }
}

impl Neurons for SpikingFusion {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.branches.neurons(out);
        self.spes.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.branches.neurons_mut(out);
        self.spes.neurons_mut(out);
    }
}
