use super::{AnchorSet, GtBox};

pub const POS_IOU: f64 = 0.5;
pub const NEG_IOU: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    /// Matched to ground-truth box `gt`.
    Positive { gt: usize },
    Negative,
    /// Excluded from the classification loss.
    Ignore,
}

/// Max-IoU assignment: positive at IoU >= 0.5, negative below 0.4, ignored in
/// between. Afterwards every ground-truth box claims its best anchor, so each
/// object has at least one positive even when no anchor reaches 0.5.
pub fn assign_targets(anchors: &AnchorSet, gts: &[GtBox]) -> Vec<Assignment> {
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    let mut gt_best: Vec<(f64, usize)> = vec![(0.0, usize::MAX); gts.len()];

    for (ai, a) in anchors.anchors.iter().enumerate() {
        let ab = a.bbox();
        for (gi, g) in gts.iter().enumerate() {
            let iou = ab.iou(&g.bounds);
            if iou > best_iou[ai] || best_gt[ai] == usize::MAX {
                best_iou[ai] = iou;
                best_gt[ai] = gi;
            }
            if iou > gt_best[gi].0 {
                gt_best[gi] = (iou, ai);
            }
        }
    }

    let mut out: Vec<Assignment> = (0..n)
        .map(|ai| {
            if best_gt[ai] == usize::MAX || best_iou[ai] < NEG_IOU {
                Assignment::Negative
            } else if best_iou[ai] >= POS_IOU {
                Assignment::Positive { gt: best_gt[ai] }
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    for (gi, &(iou, ai)) in gt_best.iter().enumerate() {
        if iou > 0.0 {
            out[ai] = Assignment::Positive { gt: gi };
        }
    }
    out
}
