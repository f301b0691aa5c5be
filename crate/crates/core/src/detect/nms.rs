use super::boxes::{iou, Detection};

/// Greedy per-class suppression. Candidates below `score_thresh` are
/// dropped; survivors are returned by descending score (input order on
/// ties), at most `max_out` of them.
pub fn nms(dets: &[Detection], iou_thresh: f64, score_thresh: f64, max_out: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= score_thresh).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.len() >= max_out {
            break;
        }
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|&k| dets[k].class == d.class && iou(&dets[k].bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}
