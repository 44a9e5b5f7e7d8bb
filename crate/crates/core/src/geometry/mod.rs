//! Oriented-box geometry: axis-aligned bounds, IoU, NMS and matching.

mod boxes;
mod nms;

pub use boxes::{
    iou_aabb, iou_boxes, iou_oriented_oracle, normalize_angle, to_aabb, Aabb, OrientedBox,
};
pub use nms::{detection_order, match_greedy, nms, Detection, Match};
