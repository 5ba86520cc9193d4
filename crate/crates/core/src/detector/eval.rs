//! Average precision with all-point interpolation, overall and per
//! ground-truth size bucket.

use super::{DetectionBox, GtBox};

pub const AP_IOU: f64 = 0.5;

/// Size buckets on `sqrt(area)` of the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeBucket {
    All,
    /// side <= 12 px
    Small,
    /// 12 < side <= 32 px
    Medium,
    /// side > 32 px
    Large,
}

impl SizeBucket {
    pub const SMALL_MAX: f64 = 12.0;
    pub const MEDIUM_MAX: f64 = 32.0;

    pub fn contains(self, side: f64) -> bool {
        match self {
            SizeBucket::All => true,
            SizeBucket::Small => side <= Self::SMALL_MAX,
            SizeBucket::Medium => side > Self::SMALL_MAX && side <= Self::MEDIUM_MAX,
            SizeBucket::Large => side > Self::MEDIUM_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApReport {
    /// Mean over classes; `None` when no class has ground truth or detections.
    pub ap: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

/// Area under the precision envelope for detections already sorted by
/// descending score. `is_tp[i]` marks true positives.
pub fn average_precision(is_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    for (i, &t) in is_tp.iter().enumerate() {
        if t {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

fn class_ap(
    dets: &[Vec<DetectionBox>],
    gts: &[Vec<GtBox>],
    class: usize,
    bucket: SizeBucket,
    iou_thresh: f64,
) -> Option<f64> {
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(img, ds)| {
            ds.iter()
                .enumerate()
                .filter(|(_, d)| d.class_idx == class)
                .map(move |(i, _)| (img, i))
        })
        .collect();
    order.sort_by(|&(ia, a), &(ib, b)| dets[ib][b].score.total_cmp(&dets[ia][a].score).then((ia, a).cmp(&(ib, b))));

    let class_gts: Vec<Vec<(&GtBox, bool)>> = gts
        .iter()
        .map(|g| {
            g.iter()
                .filter(|g| g.class_idx == class)
                .map(|g| (g, !bucket.contains(g.bounds.side())))
                .collect()
        })
        .collect();
    let n_gt = class_gts.iter().flatten().filter(|(_, ignored)| !ignored).count();
    let mut matched: Vec<Vec<bool>> = class_gts.iter().map(|g| vec![false; g.len()]).collect();

    let mut flags = Vec::new();
    for (img, i) in order {
        let d = &dets[img][i];
        let candidates = class_gts.get(img).map(Vec::as_slice).unwrap_or(&[]);
        let mut best: Option<(f64, usize)> = None;
        for (gi, (g, ignored)) in candidates.iter().enumerate() {
            if *ignored || matched[img][gi] {
                continue;
            }
            let iou = d.bounds.iou(&g.bounds);
            if iou >= iou_thresh && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            matched[img][gi] = true;
            flags.push(true);
            continue;
        }
        let hits_ignored = candidates
            .iter()
            .any(|(g, ignored)| *ignored && d.bounds.iou(&g.bounds) >= iou_thresh);
        if hits_ignored || !bucket.contains(d.bounds.side()) {
            continue;
        }
        flags.push(false);
    }
    if n_gt == 0 && flags.is_empty() {
        return None;
    }
    Some(average_precision(&flags, n_gt))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// AP at `iou_thresh` for per-image detections against per-image ground
/// truth. A class with detections but no ground truth scores 0.
pub fn evaluate_ap(dets: &[Vec<DetectionBox>], gts: &[Vec<GtBox>], n_classes: usize, iou_thresh: f64) -> ApReport {
    let bucket_ap = |b: SizeBucket| mean((0..n_classes).map(|c| class_ap(dets, gts, c, b, iou_thresh)));
    let per_class: Vec<_> = (0..n_classes)
        .map(|c| class_ap(dets, gts, c, SizeBucket::All, iou_thresh))
        .collect();
    ApReport {
        ap: mean(per_class.iter().copied()),
        ap_small: bucket_ap(SizeBucket::Small),
        ap_medium: bucket_ap(SizeBucket::Medium),
        ap_large: bucket_ap(SizeBucket::Large),
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BBox;

    fn gt(x: f64, y: f64, s: f64, c: usize) -> GtBox {
        GtBox { bounds: BBox::new(x, y, x + s, y + s), class_idx: c }
    }

    #[test]
    fn perfect_detections_score_one_everywhere() {
        let gts = vec![vec![gt(0.0, 0.0, 8.0, 0), gt(20.0, 20.0, 20.0, 1), gt(60.0, 60.0, 40.0, 2)]];
        let dets: Vec<Vec<DetectionBox>> = gts
            .iter()
            .map(|g| g.iter().map(|g| DetectionBox { bounds: g.bounds, class_idx: g.class_idx, score: 0.9 }).collect())
            .collect();
        let r = evaluate_ap(&dets, &gts, 3, AP_IOU);
        assert_eq!((r.ap, r.ap_small, r.ap_medium, r.ap_large), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn no_detections_is_zero() {
        let gts = vec![vec![gt(0.0, 0.0, 8.0, 0)]];
        let r = evaluate_ap(&[vec![]], &gts, 1, AP_IOU);
        assert_eq!(r.ap, Some(0.0));
    }

    #[test]
    fn detections_without_ground_truth_score_zero() {
        let d = DetectionBox { bounds: BBox::new(0.0, 0.0, 5.0, 5.0), class_idx: 1, score: 0.7 };
        let r = evaluate_ap(&[vec![d]], &[vec![gt(0.0, 0.0, 8.0, 0)]], 2, AP_IOU);
        assert_eq!(r.per_class, vec![Some(0.0), Some(0.0)]);
    }
}
