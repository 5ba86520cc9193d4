use serde::{Deserialize, Serialize};

use super::{decode, AnchorSet, BBox, DetectionBox};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Inference thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub max_boxes: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            score_thresh: 0.05,
            nms_iou: 0.5,
            max_boxes: 100,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_thresh) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!(
                "score_thresh and nms_iou must lie in [0, 1], got {} and {}",
                self.score_thresh, self.nms_iou
            )));
        }
        Ok(())
    }
}

/// Greedy NMS. Returns indices of kept boxes, highest score first; a box is
/// dropped when its IoU with an already kept box exceeds `iou_thresh`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| boxes[k].iou(&boxes[i]) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

/// Turns raw head outputs into per-image detections: sigmoid scores, score
/// threshold, class-wise NMS, clipping to the image, top `max_boxes`.
pub fn decode_and_nms(
    cls: &[Tensor],
    deltas: &[Tensor],
    anchors: &AnchorSet,
    params: &EvalParams,
) -> Result<Vec<Vec<DetectionBox>>> {
    params.validate()?;
    if cls.len() != anchors.level_dims.len() || deltas.len() != cls.len() {
        return Err(Error::Shape("one cls and one delta tensor per anchor level expected".into()));
    }
    let batch = cls[0].shape().n();
    let k = cls[0].shape().c();
    let (img_h, img_w) = (anchors.image_hw.0 as f64, anchors.image_hw.1 as f64);
    let mut out = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut per_class: Vec<(Vec<BBox>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
        for (level, (c, d)) in cls.iter().zip(deltas).enumerate() {
            let hw = c.shape().hw();
            let off = anchors.level_offsets[level];
            for p in 0..hw {
                for (ci, bucket) in per_class.iter_mut().enumerate() {
                    let score = sigmoid(c.data()[(b * k + ci) * hw + p]);
                    if score < params.score_thresh {
                        continue;
                    }
                    let dl = [0, 1, 2, 3].map(|j| d.data()[(b * 4 + j) * hw + p]);
                    bucket.0.push(decode(dl, &anchors.anchors[off + p]));
                    bucket.1.push(score);
                }
            }
        }
        let mut dets = Vec::new();
        for (ci, (boxes, scores)) in per_class.iter().enumerate() {
            for i in nms(boxes, scores, params.nms_iou) {
                let bounds = boxes[i].clip(img_w, img_h);
                if bounds.is_valid() {
                    dets.push(DetectionBox {
                        bounds,
                        class_idx: ci,
                        score: scores[i],
                    });
                }
            }
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        dets.truncate(params.max_boxes);
        out.push(dets);
    }
    Ok(out)
}
