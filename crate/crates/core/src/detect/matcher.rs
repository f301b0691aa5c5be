use super::boxes::{iou, BBox};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Match {
    Positive(usize),
    Negative,
    Ignored,
}

/// Label every anchor against the ground truths.
///
/// Anchors take their highest-IoU box (lowest index on ties); IoU at or
/// above `pos_thresh` is positive, below `neg_thresh` negative, otherwise
/// ignored. Each ground truth then claims its best anchor (lowest anchor
/// index on ties) as positive whatever the overlap; later boxes win
/// contested anchors.
pub fn match_anchors(anchors: &[BBox], gts: &[BBox], pos_thresh: f64, neg_thresh: f64) -> Result<Vec<Match>> {
    if pos_thresh < neg_thresh {
        return invalid(format!("positive threshold {pos_thresh} below negative {neg_thresh}"));
    }
    if gts.is_empty() {
        return Ok(vec![Match::Negative; anchors.len()]);
    }
    let mut best_anchor = vec![(f64::NEG_INFINITY, 0usize); gts.len()];
    let mut out = Vec::with_capacity(anchors.len());
    for (a, anchor) in anchors.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best.0 {
                best = (v, g);
            }
            if v > best_anchor[g].0 {
                best_anchor[g] = (v, a);
            }
        }
        out.push(if best.0 >= pos_thresh {
            Match::Positive(best.1)
        } else if best.0 < neg_thresh {
            Match::Negative
        } else {
            Match::Ignored
        });
    }
    for (g, &(_, a)) in best_anchor.iter().enumerate() {
        out[a] = Match::Positive(g);
    }
    Ok(out)
}
