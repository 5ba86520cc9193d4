//! Minimal single-stage anchor detector on top of the FPN outputs.

mod assign;
mod dump;
mod eval;
mod head;
mod loss;
mod nms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assign::{assign_targets, Assignment, NEG_IOU, POS_IOU};
pub use dump::{parse_detections, write_detections};
pub use eval::{average_precision, evaluate_ap, ApReport, SizeBucket, AP_IOU};
pub use head::Head;
pub use loss::{detection_loss, LossParts, FOCAL_ALPHA, FOCAL_GAMMA, SMOOTH_L1_BETA};
pub use nms::{decode_and_nms, nms, EvalParams};

/// Axis-aligned box in input-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Square root of the area; used for size buckets.
    pub fn side(&self) -> f64 {
        self.area().sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }
}

/// Ground-truth object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bounds: BBox,
    pub class_idx: usize,
}

/// A predicted box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionBox {
    pub bounds: BBox,
    pub class_idx: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub level: usize,
}

impl Anchor {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Anchor side length in units of the level stride.
pub const ANCHOR_SCALE: f64 = 4.0;

/// One anchor per feature position per level, flattened level-major then
/// row-major, which matches the memory order of the head outputs.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
    pub level_dims: Vec<(usize, usize)>,
    pub level_offsets: Vec<usize>,
    pub image_hw: (usize, usize),
}

impl AnchorSet {
    pub fn new(image_hw: (usize, usize), level_dims: &[(usize, usize)]) -> Result<Self> {
        let mut anchors = Vec::new();
        let mut offsets = Vec::with_capacity(level_dims.len());
        for (level, &(h, w)) in level_dims.iter().enumerate() {
            if h == 0 || w == 0 || !image_hw.0.is_multiple_of(h) || !image_hw.1.is_multiple_of(w) {
                return Err(Error::Shape(format!(
                    "feature map {h}x{w} does not tile image {image_hw:?}"
                )));
            }
            let sy = (image_hw.0 / h) as f64;
            let sx = (image_hw.1 / w) as f64;
            offsets.push(anchors.len());
            for y in 0..h {
                for x in 0..w {
                    anchors.push(Anchor {
                        cx: (x as f64 + 0.5) * sx,
                        cy: (y as f64 + 0.5) * sy,
                        w: ANCHOR_SCALE * sx,
                        h: ANCHOR_SCALE * sy,
                        level,
                    });
                }
            }
        }
        Ok(AnchorSet {
            anchors,
            level_dims: level_dims.to_vec(),
            level_offsets: offsets,
            image_hw,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Largest accepted log-scale delta (boxes up to ~62x the anchor size).
pub const MAX_LOG_DELTA: f64 = 4.135_166_556_742_356;

/// `(dx, dy, log dw, log dh)` of `gt` relative to `anchor`.
pub fn encode(gt: &BBox, anchor: &Anchor) -> [f64; 4] {
    let (gx, gy) = gt.center();
    [
        (gx - anchor.cx) / anchor.w,
        (gy - anchor.cy) / anchor.h,
        (gt.width() / anchor.w).ln(),
        (gt.height() / anchor.h).ln(),
    ]
}

pub fn decode(d: [f64; 4], anchor: &Anchor) -> BBox {
    let cx = anchor.cx + d[0] * anchor.w;
    let cy = anchor.cy + d[1] * anchor.h;
    let w = anchor.w * d[2].min(MAX_LOG_DELTA).exp();
    let h = anchor.h * d[3].min(MAX_LOG_DELTA).exp();
    BBox::from_center(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_count_for_four_levels() {
        let a = AnchorSet::new((128, 128), &[(32, 32), (16, 16), (8, 8), (4, 4)]).unwrap();
        assert_eq!(a.len(), 1360);
        let first = a.anchors[0];
        assert_eq!((first.cx, first.cy, first.w), (2.0, 2.0, 16.0));
        let last = a.anchors[1359];
        assert_eq!((last.cx, last.w, last.level), (112.0, 128.0, 3));
    }

    #[test]
    fn zero_delta_decodes_to_anchor() {
        let an = Anchor { cx: 10.0, cy: 6.0, w: 16.0, h: 16.0, level: 0 };
        assert_eq!(decode([0.0; 4], &an), an.bbox());
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(3.0, 3.0, 4.0, 4.0)), 0.0);
        assert!((a.iou(&BBox::new(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
    }
}
