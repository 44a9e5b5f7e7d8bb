//! Inference with thresholding and NMS, and detection metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, MosaicFrame};
use crate::error::{Error, Result};
use crate::geometry::{match_greedy, nms, Detection, OrientedBox};
use crate::model::{batch_input, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalThresholds {
    pub confidence: f64,
    pub nms_iou: f64,
    /// Minimum AABB IoU for a prediction to count as matching a gt.
    pub match_iou: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds {
            confidence: 0.5,
            nms_iou: 0.45,
            match_iou: 0.5,
        }
    }
}

/// Detections for one mosaic: decode, keep confidence `>= conf_threshold`,
/// then NMS. Decoded confidences are below 1, so a threshold of 1 keeps nothing.
pub fn infer(
    model: &Model,
    mosaic: &MosaicFrame,
    conf_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<Detection>> {
    let side = mosaic.image.width();
    let input = batch_input(&[mosaic.to_chw()], side, side)?;
    let decoded = model.predict(&input)?;
    let kept: Vec<Detection> = decoded
        .frame_detections(0)
        .into_iter()
        .filter(|d| d.confidence >= conf_threshold)
        .collect();
    Ok(nms(&kept, nms_threshold))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub mean_iou: f64,
    /// Mean Euclidean distance between matched centers, normalized units.
    pub mean_center_error: f64,
    /// Mean heading error modulo pi, radians in `[0, pi/2]`.
    pub mean_angle_error: f64,
    pub n_frames: usize,
    pub n_predictions: usize,
    pub n_ground_truth: usize,
    pub n_matched: usize,
    /// Set when there were no predictions; precision is then reported as 0.
    pub precision_undefined: bool,
}

/// Heading difference of two rectangles, which are symmetric under a half turn.
pub fn angle_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Aggregate metrics over frames of `(predictions, ground truth)`.
pub fn evaluate_detections(
    frames: &[(Vec<Detection>, Vec<OrientedBox>)],
    match_iou: f64,
) -> Result<MetricsReport> {
    if frames.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty dataset".into()));
    }
    let (mut n_pred, mut n_gt, mut n_match) = (0usize, 0usize, 0usize);
    let (mut iou, mut center, mut angle) = (0.0, 0.0, 0.0);
    for (preds, gts) in frames {
        n_pred += preds.len();
        n_gt += gts.len();
        for m in match_greedy(preds, gts, match_iou) {
            let (p, g) = (&preds[m.pred].bbox, &gts[m.gt]);
            n_match += 1;
            iou += m.iou;
            center += (p.cx - g.cx).hypot(p.cy - g.cy);
            angle += angle_error(p.theta, g.theta);
        }
    }
    let mean = |s: f64| if n_match > 0 { s / n_match as f64 } else { 0.0 };
    Ok(MetricsReport {
        precision: if n_pred > 0 {
            n_match as f64 / n_pred as f64
        } else {
            0.0
        },
        recall: if n_gt > 0 {
            n_match as f64 / n_gt as f64
        } else {
            0.0
        },
        mean_iou: mean(iou),
        mean_center_error: mean(center),
        mean_angle_error: mean(angle),
        n_frames: frames.len(),
        n_predictions: n_pred,
        n_ground_truth: n_gt,
        n_matched: n_match,
        precision_undefined: n_pred == 0,
    })
}

pub fn evaluate_model(
    model: &Model,
    frames: &[Frame],
    t: &EvalThresholds,
) -> Result<MetricsReport> {
    let per_frame = frames
        .iter()
        .map(|f| {
            Ok((
                infer(model, &f.mosaic, t.confidence, t.nms_iou)?,
                f.truth.vehicles.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_detections(&per_frame, t.match_iou)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: OrientedBox, c: f64) -> Detection {
        Detection {
            bbox: b,
            confidence: c,
            scale_index: 0,
            cell: (0, 0),
        }
    }

    fn bx(cx: f64, cy: f64, th: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, 0.1, 0.045, th).unwrap()
    }

    #[test]
    fn identical_predictions() {
        let gts = vec![bx(0.2, 0.2, 0.0), bx(0.7, 0.6, 1.0)];
        let preds = gts.iter().map(|&b| det(b, 0.9)).collect();
        let r = evaluate_detections(&[(preds, gts)], 0.5).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.mean_center_error),
            (1.0, 1.0, 0.0)
        );
        assert_eq!(r.mean_iou, 1.0);
    }

    #[test]
    fn no_predictions_flags_precision() {
        let r = evaluate_detections(&[(vec![], vec![bx(0.2, 0.2, 0.0)])], 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
        assert!(r.precision_undefined);
        assert!(evaluate_detections(&[], 0.5).is_err());
    }

    #[test]
    fn angle_error_mod_pi() {
        assert!((angle_error(0.1, PI + 0.1)).abs() < 1e-12);
        assert!((angle_error(0.0, PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert!((angle_error(3.0, -3.0) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn confidence_threshold_of_one_keeps_nothing() {
        use crate::dataset::{synth_scene, SceneSpec};
        use crate::model::{BackboneConfig, HeadConfig, ModelConfig, StageConfig};
        let ch = [4, 4, 4];
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                stem_channels: 2,
                stages: ch
                    .map(|channels| StageConfig {
                        channels,
                        stride: 2,
                        depth: 0,
                    })
                    .to_vec(),
            },
            head: HeadConfig {
                n_l: 3,
                ch: ch.to_vec(),
                mid_channels: 2,
                out_channels: 4,
            },
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg).unwrap();
        let mut params = m.params().to_vec();
        for (i, name) in m.names().iter().enumerate() {
            if name.ends_with("conv3.bias") {
                let mut b = params[i].data().to_vec();
                b[3] = 1000.0;
                params[i] = crate::numcore::Tensor::parameter(&[4], b).unwrap();
            }
        }
        m.set_params(params).unwrap();
        let (mosaic, _) = synth_scene(&SceneSpec {
            seed: 3,
            n_vehicles: 2,
            tile_size: 64,
        })
        .unwrap();
        assert!(infer(&m, &mosaic, 1.0, 0.45).unwrap().is_empty());
        assert!(!infer(&m, &mosaic, 0.99, 0.45).unwrap().is_empty());
    }
}
