//! Sample assignment and `L_total = alpha * L_bbox + beta * (L_pos + L_neg)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_boxes, OrientedBox};
use crate::model::Decoded;
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub iou_pos_threshold: f64,
    pub bce_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
            iou_pos_threshold: 0.5,
            bce_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.iou_pos_threshold) {
            return Err(Error::Config(format!(
                "iou_pos_threshold {} outside [0, 1]",
                self.iou_pos_threshold
            )));
        }
        if !(self.bce_epsilon > 0.0 && self.bce_epsilon < 0.5) {
            return Err(Error::Config(format!(
                "bce_epsilon {} outside (0, 0.5)",
                self.bce_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bbox: f64,
    pub l_pos_conf: f64,
    pub l_neg_conf: f64,
    pub total: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Positive `(entry, gt)` pairs and negative entries of one frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<usize>,
}

/// Assign the decoded entries `entries` of one frame to its ground truth.
///
/// An entry is positive when its AABB IoU with some gt exceeds the threshold,
/// paired with the highest-IoU gt (lowest index on ties). A gt left without
/// any positive adopts the not-yet-positive finest-scale entry whose cell
/// center is nearest its center (lowest entry index on ties).
pub fn assign(
    decoded: &Decoded,
    entries: &[usize],
    gts: &[OrientedBox],
    cfg: &LossConfig,
) -> Assignment {
    let mut pos_of: Vec<Option<usize>> = vec![None; entries.len()];
    for (k, &e) in entries.iter().enumerate() {
        let det = decoded.detection(e);
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let iou = iou_boxes(&det.bbox, gt);
            if iou > cfg.iou_pos_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        pos_of[k] = best.map(|(g, _)| g);
    }
    for (g, gt) in gts.iter().enumerate() {
        if pos_of.contains(&Some(g)) {
            continue;
        }
        let mut nearest: Option<(usize, f64)> = None;
        for (k, &e) in entries.iter().enumerate() {
            let c = decoded.cells[e];
            if c.scale_index != 0 || pos_of[k].is_some() {
                continue;
            }
            let (x0, y0) = decoded.cell_center(e);
            let d = (x0 - gt.cx).powi(2) + (y0 - gt.cy).powi(2);
            if nearest.is_none_or(|(_, b)| d < b) {
                nearest = Some((k, d));
            }
        }
        if let Some((k, _)) = nearest {
            pos_of[k] = Some(g);
        }
    }
    let mut out = Assignment::default();
    for (k, p) in pos_of.into_iter().enumerate() {
        match p {
            Some(g) => out.positives.push((entries[k], g)),
            None => out.negatives.push(entries[k]),
        }
    }
    out
}

/// `-(y log p + (1 - y) log(1 - p))` with `p` clamped to `[eps, 1 - eps]`.
pub fn bce(p: f64, y: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `(IoU_aabb(pred, gt) - 1)^2`.
pub fn bbox_loss(pred: &OrientedBox, gt: &OrientedBox) -> f64 {
    (iou_boxes(pred, gt) - 1.0).powi(2)
}

fn constant(values: Vec<f64>) -> Result<Tensor> {
    let n = values.len();
    Tensor::new(&[n], values)
}

/// AABB IoU between predicted boxes `(cx, cy, theta)` of fixed `size` and
/// constant ground-truth boxes, kept on the graph.
pub fn iou_aabb_graph(
    cx: &Tensor,
    cy: &Tensor,
    theta: &Tensor,
    size: (f64, f64),
    gts: &[OrientedBox],
) -> Result<Tensor> {
    let (w, h) = size;
    let (c, s) = (theta.cos().abs(), theta.sin().abs());
    let ex = c.scale(w / 2.0).add(&s.scale(h / 2.0))?;
    let ey = s.scale(w / 2.0).add(&c.scale(h / 2.0))?;
    let g: Vec<_> = gts.iter().map(|b| b.to_aabb()).collect();
    let gx0 = constant(g.iter().map(|a| a.xmin).collect())?;
    let gx1 = constant(g.iter().map(|a| a.xmax).collect())?;
    let gy0 = constant(g.iter().map(|a| a.ymin).collect())?;
    let gy1 = constant(g.iter().map(|a| a.ymax).collect())?;
    let g_area = constant(g.iter().map(|a| a.area()).collect())?;
    let ix = cx
        .add(&ex)?
        .minimum(&gx1)?
        .sub(&cx.sub(&ex)?.maximum(&gx0)?)?
        .relu();
    let iy = cy
        .add(&ey)?
        .minimum(&gy1)?
        .sub(&cy.sub(&ey)?.maximum(&gy0)?)?
        .relu();
    let inter = ix.mul(&iy)?;
    let p_area = ex.mul(&ey)?.scale(4.0);
    let union = p_area.add(&g_area)?.sub(&inter)?;
    inter.div(&union)
}

/// Loss over a decoded batch; `gts[b]` holds the ground truth of frame `b`.
/// Returns the graph scalar to differentiate and its breakdown.
pub fn total_loss(
    decoded: &Decoded,
    gts: &[Vec<OrientedBox>],
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    cfg.validate()?;
    let mut pos: Vec<(usize, OrientedBox)> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (b, frame_gts) in gts.iter().enumerate() {
        let entries = decoded.frame_entries(b);
        if entries.is_empty() {
            return Err(Error::Contract(format!(
                "batch element {b} has no predictions"
            )));
        }
        let a = assign(decoded, &entries, frame_gts, cfg);
        pos.extend(a.positives.into_iter().map(|(e, g)| (e, frame_gts[g])));
        neg.extend(a.negatives);
    }
    build_loss(decoded, &pos, &neg, cfg)
}

/// Loss for an explicit assignment of entries.
pub fn build_loss(
    decoded: &Decoded,
    pos: &[(usize, OrientedBox)],
    neg: &[usize],
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let eps = cfg.bce_epsilon;
    let zero = Tensor::scalar(0.0);
    let (l_bbox, l_pos) = if pos.is_empty() {
        (zero.clone(), zero.clone())
    } else {
        let idx = Arc::new(pos.iter().map(|p| p.0).collect::<Vec<_>>());
        let gtb: Vec<OrientedBox> = pos.iter().map(|p| p.1).collect();
        let iou = iou_aabb_graph(
            &decoded.x.gather(idx.clone())?,
            &decoded.y.gather(idx.clone())?,
            &decoded.theta.gather(idx.clone())?,
            decoded.canonical_size,
            &gtb,
        )?;
        let l_bbox = iou.offset(-1.0).square().mean();
        let conf = decoded.conf.gather(idx)?.clamp(eps, 1.0 - eps);
        (l_bbox, conf.log().mean().scale(-1.0))
    };
    let l_neg = if neg.is_empty() {
        zero
    } else {
        let conf = decoded
            .conf
            .gather(Arc::new(neg.to_vec()))?
            .clamp(eps, 1.0 - eps);
        conf.scale(-1.0).offset(1.0).log().mean().scale(-1.0)
    };
    let total = l_bbox
        .scale(cfg.alpha)
        .add(&l_pos.add(&l_neg)?.scale(cfg.beta))?;
    let breakdown = LossBreakdown {
        l_bbox: l_bbox.item()?,
        l_pos_conf: l_pos.item()?,
        l_neg_conf: l_neg.item()?,
        total: total.item()?,
        n_pos: pos.len(),
        n_neg: neg.len(),
    };
    Ok((total, breakdown))
}
