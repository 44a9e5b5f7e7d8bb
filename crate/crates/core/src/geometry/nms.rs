use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::boxes::{iou_boxes, OrientedBox};

/// One decoded prediction: a box, its confidence, and the head cell it came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub confidence: f64,
    pub scale_index: usize,
    /// `(m, n)`: column and row on the scale's grid.
    pub cell: (usize, usize),
}

/// Descending confidence, then `(scale_index, m, n)` ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.scale_index.cmp(&b.scale_index))
        .then(a.cell.cmp(&b.cell))
}

/// Greedy non-maximum suppression on AABB IoU.
///
/// A detection survives iff its IoU with every previously kept detection is
/// at most `iou_threshold`. Output is in keep order (confidence descending).
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        if kept
            .iter()
            .all(|k| iou_boxes(&k.bbox, &d.bbox) <= iou_threshold)
        {
            kept.push(*d);
        }
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching: repeatedly take the unmatched pair with the
/// highest AABB IoU (ties by `(pred, gt)` ascending) while that IoU is
/// positive and at least `iou_min`.
pub fn match_greedy(preds: &[Detection], gts: &[OrientedBox], iou_min: f64) -> Vec<Match> {
    let mut pairs: Vec<Match> = Vec::new();
    for (p, d) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let iou = iou_boxes(&d.bbox, gt);
            if iou > 0.0 && iou >= iou_min {
                pairs.push(Match {
                    pred: p,
                    gt: g,
                    iou,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut out = Vec::new();
    for m in pairs {
        if !used_p[m.pred] && !used_g[m.gt] {
            used_p[m.pred] = true;
            used_g[m.gt] = true;
            out.push(m);
        }
    }
    out
}
