//! Anchor-based detection: boxes, anchors, matching, suppression, the SSD
//! head and mAP evaluation.

mod anchors;
mod boxes;
mod head;
mod map;
mod matcher;
mod nms;

pub use anchors::{generate_anchors, AnchorConfig, AnchorLevel, AnchorSet};
pub use boxes::{decode_box, encode_box, filter_gt_boxes, iou, BBox, Detection};
pub use head::{build_detector, build_targets, postprocess, Detector, HeadConfig, PostProcess, SsdHead, PRIOR_PROB};
pub use map::{ap_101, coco_thresholds, evaluate_map, parse_detections, write_detections, MapReport};
pub use matcher::{match_anchors, Match};
pub use nms::nms;

#[cfg(test)]
mod tests;
