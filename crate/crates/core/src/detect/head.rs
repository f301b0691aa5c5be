use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{generate_anchors, AnchorConfig, AnchorSet};
use super::boxes::{decode_box, encode_box, BBox, Detection};
use super::matcher::{match_anchors, Match};
use super::nms::nms;
use crate::autograd::{sigmoid, Var};
use crate::decode::Decode;
use crate::error::{invalid, shape_err, Result};
use crate::losses::MultiboxTargets;
use crate::nn::{Conv2d, Ctx, ParamStore};
use crate::snn::{build_detector_backbone, DetectorBackbone, DetectorConfig, Neurons, PlifNeuron};
use crate::tensor::Tensor;

/// Prior foreground probability used for the classification bias.
pub const PRIOR_PROB: f64 = 0.01;

/// Per-level 3x3 classification and regression convolutions.
#[derive(Debug, Clone)]
pub struct SsdHead {
    pub cls: Vec<Conv2d>,
    pub reg: Vec<Conv2d>,
    pub classes: usize,
    pub per_cell: usize,
}

impl SsdHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        level_channels: &[usize],
        classes: usize,
        per_cell: usize,
        rng: &mut R,
    ) -> Self {
        let bias = -((1.0 - PRIOR_PROB) / PRIOR_PROB).ln();
        let mut cls = Vec::new();
        let mut reg = Vec::new();
        for (l, &c) in level_channels.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.cls{l}"), c, per_cell * classes, 3, 1, 1, true, rng);
            let b = conv.bias.expect("head conv has bias");
            *store.value_mut(b) = Tensor::full(&[per_cell * classes], bias);
            cls.push(conv);
            reg.push(Conv2d::new(store, &format!("{name}.reg{l}"), c, per_cell * 4, 3, 1, 1, true, rng));
        }
        Self {
            cls,
            reg,
            classes,
            per_cell,
        }
    }

    /// Class logits `[N, A, K]` and box offsets `[N, A, 4]` in anchor order.
    pub fn forward(&self, ctx: &mut Ctx, levels: &[Var]) -> Result<(Var, Var)> {
        if levels.len() != self.cls.len() {
            return shape_err(format!("head has {} levels, got {} maps", self.cls.len(), levels.len()));
        }
        let mut cs = Vec::new();
        let mut bs = Vec::new();
        for (l, &x) in levels.iter().enumerate() {
            let c = self.cls[l].forward(ctx, x)?;
            cs.push(ctx.graph.head_flatten(c, self.per_cell, self.classes)?);
            let b = self.reg[l].forward(ctx, x)?;
            bs.push(ctx.graph.head_flatten(b, self.per_cell, 4)?);
        }
        Ok((ctx.graph.concat(&cs, 1)?, ctx.graph.concat(&bs, 1)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub classes: usize,
    pub anchors: AnchorConfig,
    pub decode: Decode,
    pub pos_thresh: f64,
    pub neg_thresh: f64,
}

impl HeadConfig {
    pub fn toy(classes: usize) -> Self {
        Self {
            classes,
            anchors: AnchorConfig::toy(),
            decode: Decode::Rate,
            pos_thresh: 0.5,
            neg_thresh: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcess {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_out: usize,
    /// Candidates kept per sample before suppression.
    pub pre_nms: usize,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.5,
            max_out: 100,
            pre_nms: 400,
        }
    }
}

/// Spiking backbone, decode, head and anchors.
#[derive(Debug, Clone)]
pub struct Detector {
    pub backbone: DetectorBackbone,
    pub head: SsdHead,
    pub anchors: AnchorSet,
    pub config: HeadConfig,
}

pub fn build_detector<R: Rng>(
    store: &mut ParamStore,
    config: &DetectorConfig,
    head: &HeadConfig,
    rng: &mut R,
) -> Result<Detector> {
    if head.classes == 0 {
        return invalid("detector needs at least one class");
    }
    let backbone = build_detector_backbone(store, config, rng)?;
    let shapes = backbone.pyramid_shapes()?;
    let hw: Vec<(usize, usize)> = shapes.iter().map(|s| s.1).collect();
    let anchors = generate_anchors(&hw, config.input_hw, &head.anchors)?;
    let channels: Vec<usize> = shapes.iter().map(|s| s.0).collect();
    let ssd = SsdHead::new(store, "head", &channels, head.classes, anchors.per_cell, rng);
    Ok(Detector {
        backbone,
        head: ssd,
        anchors,
        config: head.clone(),
    })
}

impl Detector {
    /// Forward a time-major batch `[T*N, C, H, W]`.
    pub fn forward(&mut self, ctx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let maps = self.backbone.forward(ctx, x)?;
        let steps = ctx.steps;
        let decoded = maps
            .into_iter()
            .map(|m| ctx.graph.decode(self.config.decode, m, steps))
            .collect::<Result<Vec<_>>>()?;
        self.head.forward(ctx, &decoded)
    }

    pub fn targets(&self, gts: &[Vec<(u32, BBox)>]) -> Result<MultiboxTargets> {
        build_targets(&self.anchors.boxes, gts, self.config.classes, self.config.pos_thresh, self.config.neg_thresh)
    }

    pub fn postprocess(&self, cls: &Tensor, boxes: &Tensor, image_hw: (usize, usize), pp: &PostProcess) -> Result<Vec<Vec<Detection>>> {
        postprocess(cls, boxes, &self.anchors.boxes, image_hw, pp)
    }
}

impl Neurons for Detector {
    fn neurons<'s>(&'s self, out: &mut Vec<&'s PlifNeuron>) {
        self.backbone.neurons(out);
    }
    fn neurons_mut<'s>(&'s mut self, out: &mut Vec<&'s mut PlifNeuron>) {
        self.backbone.neurons_mut(out);
    }
}

/// Dense per-anchor training targets for a batch of ground truths.
pub fn build_targets(
    anchors: &[BBox],
    gts: &[Vec<(u32, BBox)>],
    classes: usize,
    pos_thresh: f64,
    neg_thresh: f64,
) -> Result<MultiboxTargets> {
    let (n, a) = (gts.len(), anchors.len());
    let mut cls = vec![0.0; n * a * classes];
    let mut weight = vec![1.0; n * a * classes];
    let mut boxes = vec![0.0; n * a * 4];
    let mut mask = vec![0.0; n * a * 4];
    let mut num_pos = 0;
    for (s, sample) in gts.iter().enumerate() {
        if let Some(&(c, _)) = sample.iter().find(|g| g.0 as usize >= classes) {
            return invalid(format!("ground-truth class {c} outside {classes} classes"));
        }
        let bbs: Vec<BBox> = sample.iter().map(|g| g.1).collect();
        let m = match_anchors(anchors, &bbs, pos_thresh, neg_thresh)?;
        for (i, label) in m.into_iter().enumerate() {
            let row = s * a + i;
            match label {
                Match::Positive(g) => {
                    num_pos += 1;
                    cls[row * classes + sample[g].0 as usize] = 1.0;
                    let off = encode_box(&bbs[g], &anchors[i])?;
                    boxes[row * 4..row * 4 + 4].copy_from_slice(&off);
                    mask[row * 4..row * 4 + 4].fill(1.0);
                }
                Match::Ignored => weight[row * classes..(row + 1) * classes].fill(0.0),
                Match::Negative => {}
            }
        }
    }
    Ok(MultiboxTargets {
        cls: Tensor::from_vec(&[n, a, classes], cls)?,
        cls_weight: Tensor::from_vec(&[n, a, classes], weight)?,
        boxes: Tensor::from_vec(&[n, a, 4], boxes)?,
        box_mask: Tensor::from_vec(&[n, a, 4], mask)?,
        num_pos,
    })
}

/// Sigmoid scores, top candidates, decoded and clipped boxes, then NMS.
pub fn postprocess(
    cls: &Tensor,
    boxes: &Tensor,
    anchors: &[BBox],
    image_hw: (usize, usize),
    pp: &PostProcess,
) -> Result<Vec<Vec<Detection>>> {
    let (cs, bs) = (cls.shape(), boxes.shape());
    if cs.len() != 3 || bs.len() != 3 || cs[0] != bs[0] || cs[1] != anchors.len() || bs[1] != anchors.len() || bs[2] != 4 {
        return shape_err(format!("postprocess got {cs:?} / {bs:?} for {} anchors", anchors.len()));
    }
    let (n, a, k) = (cs[0], cs[1], cs[2]);
    let (h, w) = (image_hw.0 as f64, image_hw.1 as f64);
    Ok(crate::par::map_range(n, |s| {
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..a {
            for c in 0..k {
                let p = sigmoid(cls.data()[(s * a + i) * k + c]);
                if p >= pp.score_thresh {
                    cand.push((p, i, c));
                }
            }
        }
        cand.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        cand.truncate(pp.pre_nms);
        let dets: Vec<Detection> = cand
            .into_iter()
            .filter_map(|(p, i, c)| {
                let o = &boxes.data()[(s * a + i) * 4..(s * a + i) * 4 + 4];
                let bb = decode_box(&[o[0], o[1], o[2], o[3]], &anchors[i]).clipped(w, h);
                (bb.w > 0.0 && bb.h > 0.0).then_some(Detection {
                    class: c as u32,
                    score: p,
                    bbox: bb,
                })
            })
            .collect();
        nms(&dets, pp.nms_iou, pp.score_thresh, pp.max_out)
    }))
}
