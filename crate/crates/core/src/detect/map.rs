use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::boxes::{iou, BBox, Detection};
use crate::error::{Error, Result};
use crate::par;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map_50: f64,
    pub map_50_95: f64,
    /// AP averaged over thresholds, per class with ground truth.
    pub per_class: BTreeMap<u32, f64>,
}

/// Area under the 101-point interpolated precision envelope.
pub fn ap_101(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        let k = recall.partition_point(|&v| v < r);
        if k < precision.len() {
            total += precision[k];
        }
    }
    total / 101.0
}

/// TP flags of class `class` detections in descending-score order across
/// all samples, plus the ground-truth count.
fn class_hits(dets: &[Vec<Detection>], gts: &[Vec<(u32, BBox)>], class: u32, thresh: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (s, ds) in dets.iter().enumerate() {
        for (i, d) in ds.iter().enumerate() {
            if d.class == class {
                order.push((s, i));
            }
        }
    }
    order.sort_by(|a, b| {
        dets[b.0][b.1]
            .score
            .total_cmp(&dets[a.0][a.1].score)
            .then(a.cmp(b))
    });
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let num_gt = gts.iter().flatten().filter(|g| g.0 == class).count();
    let tp = order
        .into_iter()
        .map(|(s, i)| {
            let d = &dets[s][i];
            let mut best: Option<(f64, usize)> = None;
            for (j, (c, b)) in gts[s].iter().enumerate() {
                if *c != class || used[s][j] {
                    continue;
                }
                let v = iou(&d.bbox, b);
                if v >= thresh && best.map_or(true, |(bv, _)| v > bv) {
                    best = Some((v, j));
                }
            }
            match best {
                Some((_, j)) => {
                    used[s][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (tp, num_gt)
}

/// COCO-style mean AP. Samples are positional: `dets[i]` is scored against
/// `gts[i]`. Classes without any ground truth are skipped.
pub fn evaluate_map(dets: &[Vec<Detection>], gts: &[Vec<(u32, BBox)>], thresholds: &[f64]) -> Result<MapReport> {
    if dets.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection samples vs {} ground-truth samples",
            dets.len(),
            gts.len()
        )));
    }
    let classes: BTreeSet<u32> = gts.iter().flatten().map(|g| g.0).collect();
    let classes: Vec<u32> = classes.into_iter().collect();
    let ap_at = |class: u32, t: f64| {
        let (tp, n) = class_hits(dets, gts, class, t);
        ap_101(&tp, n)
    };
    let rows: Vec<(f64, f64)> = par::map_slice(&classes, |&c| {
        let aps: Vec<f64> = thresholds.iter().map(|&t| ap_at(c, t)).collect();
        let mean = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
        (ap_at(c, 0.5), mean)
    });
    let k = classes.len().max(1) as f64;
    Ok(MapReport {
        map_50: rows.iter().map(|r| r.0).sum::<f64>() / k,
        map_50_95: rows.iter().map(|r| r.1).sum::<f64>() / k,
        per_class: classes.iter().zip(&rows).map(|(&c, r)| (c, r.1)).collect(),
    })
}

/// Write `sample_id class score x y w h` lines.
pub fn write_detections<W: Write>(mut w: W, rows: &[(String, Detection)]) -> Result<()> {
    for (id, d) in rows {
        writeln!(
            w,
            "{id} {} {} {} {} {} {}",
            d.class, d.score, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h
        )?;
    }
    Ok(())
}

pub fn parse_detections<R: BufRead>(r: R) -> Result<Vec<(String, Detection)>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 7 {
            return Err(Error::Parse(format!("line {}: expected 7 fields, got {}", n + 1, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
        let class = f[1]
            .parse::<u32>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        out.push((
            f[0].to_string(),
            Detection {
                class,
                score: num(f[2])?,
                bbox: BBox::new(num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?),
            },
        ));
    }
    Ok(out)
}
