//! Reference implementations shared by integration tests.
#![allow(dead_code)]

use ipgnet::detector::BBox;
use ipgnet::Tensor;
use rand::Rng;

/// Plain-arithmetic IoU kept separate from the library's.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let area = |r: &BBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    inter / (area(a) + area(b) - inter)
}

pub fn random_box(rng: &mut impl Rng, extent: f64, min_side: f64, max_side: f64) -> BBox {
    let w = rng.random_range(min_side..max_side);
    let h = rng.random_range(min_side..max_side);
    let x = rng.random_range(0.0..extent - w);
    let y = rng.random_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h)
}

/// True when some pair's IoU sits within round-off of `thresh`.
pub fn iou_near_threshold(boxes: &[BBox], thresh: f64) -> bool {
    boxes
        .iter()
        .enumerate()
        .any(|(i, a)| boxes[i + 1..].iter().any(|b| (ref_iou(a, b) - thresh).abs() < 1e-9))
}

/// Every kept-set bitmask `S` with: no two members of `S` overlap above
/// `thresh`, and every non-member overlaps a higher-scored member above it.
/// With distinct scores exactly one such set exists and greedy NMS must
/// return it. Enumerates all `2^n` subsets.
pub fn exhaustive_nms(boxes: &[BBox], scores: &[f64], thresh: f64) -> Vec<u32> {
    let n = boxes.len();
    assert!(n < 32);
    let mut conflict = vec![0u32; n];
    let mut higher = vec![0u32; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && ref_iou(&boxes[i], &boxes[j]) > thresh {
                conflict[i] |= 1 << j;
            }
            if scores[j] > scores[i] {
                higher[i] |= 1 << j;
            }
        }
    }
    (0u32..(1u32 << n))
        .filter(|&s| {
            (0..n).all(|i| {
                if s >> i & 1 == 1 {
                    s & conflict[i] == 0
                } else {
                    s & conflict[i] & higher[i] != 0
                }
            })
        })
        .collect()
}

/// Piecewise-linear resampling of each channel vector, evaluated by
/// locating the knot segment that contains each sample position.
pub fn channel_interp_oracle(x: &Tensor, out_c: usize) -> Tensor {
    let s = x.shape();
    let c_in = s.c();
    Tensor::from_fn([s.n(), out_c, s.h(), s.w()], |n, oc, y, xx| {
        let t = if out_c == 1 {
            0.0
        } else {
            (oc * (c_in - 1)) as f64 / (out_c - 1) as f64
        };
        if c_in == 1 {
            return x.at(n, 0, y, xx);
        }
        let k = (0..c_in - 1).find(|&k| t <= (k + 1) as f64).unwrap_or(c_in - 2);
        let w = t - k as f64;
        (1.0 - w) * x.at(n, k, y, xx) + w * x.at(n, k + 1, y, xx)
    })
}

/// Layer norm across channels with unit scale and zero shift.
pub fn layer_norm_ref(x: &Tensor, eps: f64) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, y, xx| {
        let vals: Vec<f64> = (0..s.c()).map(|k| x.at(n, k, y, xx)).collect();
        let m = vals.iter().sum::<f64>() / s.c() as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / s.c() as f64;
        (x.at(n, c, y, xx) - m) / (v + eps).sqrt()
    })
}
