use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{invalid, Result};

/// Anchor sizes per pyramid level and the shared scale/aspect multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Base side length in pixels, one per level.
    pub sizes: Vec<f64>,
    pub scales: Vec<f64>,
    /// Width over height.
    pub ratios: Vec<f64>,
}

impl AnchorConfig {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// Three levels at strides 4, 8, 16 of a 64x64 frame.
    pub fn toy() -> Self {
        Self {
            sizes: vec![16.0, 28.0, 44.0],
            scales: vec![1.0, 1.4],
            ratios: vec![1.0, 2.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub height: usize,
    pub width: usize,
    pub offset: usize,
}

/// Dense anchors ordered level-major, then row-major cells, then anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub levels: Vec<AnchorLevel>,
    pub per_cell: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub fn generate_anchors(
    level_shapes: &[(usize, usize)],
    image_hw: (usize, usize),
    config: &AnchorConfig,
) -> Result<AnchorSet> {
    if level_shapes.is_empty() {
        return invalid("anchors need at least one level");
    }
    if config.sizes.len() != level_shapes.len() {
        return invalid(format!(
            "{} anchor sizes for {} levels",
            config.sizes.len(),
            level_shapes.len()
        ));
    }
    if config.per_cell() == 0 || config.ratios.iter().chain(&config.scales).any(|&v| !(v > 0.0)) {
        return invalid("anchor scales and ratios must be positive and non-empty");
    }
    let (ih, iw) = (image_hw.0 as f64, image_hw.1 as f64);
    let mut boxes = Vec::new();
    let mut levels = Vec::new();
    for (&(h, w), &size) in level_shapes.iter().zip(&config.sizes) {
        levels.push(AnchorLevel {
            height: h,
            width: w,
            offset: boxes.len(),
        });
        let (sy, sx) = (ih / h as f64, iw / w as f64);
        for i in 0..h {
            for j in 0..w {
                let (cx, cy) = ((j as f64 + 0.5) * sx, (i as f64 + 0.5) * sy);
                for &s in &config.scales {
                    for &r in &config.ratios {
                        let side = size * s;
                        boxes.push(BBox::from_center(cx, cy, side * r.sqrt(), side / r.sqrt()));
                    }
                }
            }
        }
    }
    Ok(AnchorSet {
        boxes,
        levels,
        per_cell: config.per_cell(),
    })
}
