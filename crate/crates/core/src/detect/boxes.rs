use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box in pixels, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// Intersect with the `[0, w) x [0, h)` frame.
    pub fn clipped(&self, width: f64, height: f64) -> Self {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = (self.x + self.w).clamp(0.0, width);
        let y1 = (self.y + self.h).clamp(0.0, height);
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// A ground-truth or predicted object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: u32,
    pub score: f64,
    pub bbox: BBox,
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Offsets of `gt` relative to `anchor`: centre deltas over anchor size and
/// log size ratios.
pub fn encode_box(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return invalid(format!("box {gt:?} has non-positive size"));
    }
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return invalid(format!("anchor {anchor:?} has non-positive size"));
    }
    let (gx, gy) = gt.center();
    let (ax, ay) = anchor.center();
    Ok([
        (gx - ax) / anchor.w,
        (gy - ay) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ])
}

pub fn decode_box(offsets: &[f64; 4], anchor: &BBox) -> BBox {
    let (ax, ay) = anchor.center();
    BBox::from_center(
        ax + offsets[0] * anchor.w,
        ay + offsets[1] * anchor.h,
        anchor.w * offsets[2].exp(),
        anchor.h * offsets[3].exp(),
    )
}

/// Drop boxes with a side below `min_side` or a diagonal below `min_diag`.
pub fn filter_gt_boxes(gts: &[Detection], min_side: f64, min_diag: f64) -> Vec<Detection> {
    gts.iter()
        .filter(|d| d.bbox.w >= min_side && d.bbox.h >= min_side && d.bbox.diagonal() >= min_diag)
        .copied()
        .collect()
}
