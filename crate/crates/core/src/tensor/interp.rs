//! Align-corners linear interpolation along the spatial axes and along the
//! channel axis.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Source taps for one output coordinate: `(lo, hi, frac)`.
pub(super) fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if output > 1 {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Exact at `a == b`, so constant signals stay constant bit for bit.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize with the align-corners convention.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("resize target {out_h}x{out_w} must be at least 1x1")));
    }
    let s = x.shape();
    if (out_h, out_w) == s.spatial() {
        return Ok(x.clone());
    }
    let ty = taps(s.h(), out_h);
    let tx = taps(s.w(), out_w);
    let out_shape = Shape::new(s.n(), s.c(), out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for nc in 0..s.n() * s.c() {
        let plane = &x.data()[nc * s.hw()..(nc + 1) * s.hw()];
        for &(y0, y1, fy) in &ty {
            let r0 = &plane[y0 * s.w()..(y0 + 1) * s.w()];
            let r1 = &plane[y1 * s.w()..(y1 + 1) * s.w()];
            for &(x0, x1, fx) in &tx {
                let top = lerp(r0[x0], r0[x1], fx);
                let bot = lerp(r1[x0], r1[x1], fx);
                out.push(lerp(top, bot, fy));
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub(super) fn resize_bilinear_backward(in_shape: Shape, dy: &Tensor) -> Tensor {
    let s = in_shape;
    let (oh, ow) = dy.shape().spatial();
    if (oh, ow) == s.spatial() {
        return dy.clone();
    }
    let ty = taps(s.h(), oh);
    let tx = taps(s.w(), ow);
    let mut dx = Tensor::zeros(s);
    let d = dx.data_mut();
    for nc in 0..s.n() * s.c() {
        let plane = &mut d[nc * s.hw()..(nc + 1) * s.hw()];
        let g = &dy.data()[nc * oh * ow..(nc + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                plane[y0 * s.w() + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * s.w() + x1] += v * (1.0 - fy) * fx;
                plane[y1 * s.w() + x0] += v * fy * (1.0 - fx);
                plane[y1 * s.w() + x1] += v * fy * fx;
            }
        }
    }
    dx
}

/// Treats the channel axis at each `(n, y, x)` as a 1-D signal and
/// resamples it to `out_channels` samples (align-corners).
pub fn channel_interp(x: &Tensor, out_channels: usize) -> Result<Tensor> {
    if out_channels == 0 {
        return Err(Error::Shape("channel_interp needs at least one output channel".into()));
    }
    let s = x.shape();
    if out_channels == s.c() {
        return Ok(x.clone());
    }
    let tc = taps(s.c(), out_channels);
    let hw = s.hw();
    let out_shape = Shape::new(s.n(), out_channels, s.h(), s.w());
    let mut out = vec![0.0; out_shape.numel()];
    for n in 0..s.n() {
        let src = &x.data()[n * s.c() * hw..(n + 1) * s.c() * hw];
        let dst = &mut out[n * out_channels * hw..(n + 1) * out_channels * hw];
        for (oc, &(c0, c1, f)) in tc.iter().enumerate() {
            for p in 0..hw {
                dst[oc * hw + p] = lerp(src[c0 * hw + p], src[c1 * hw + p], f);
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub(super) fn channel_interp_backward(in_shape: Shape, dy: &Tensor) -> Tensor {
    let s = in_shape;
    let oc_n = dy.shape().c();
    if oc_n == s.c() {
        return dy.clone();
    }
    let tc = taps(s.c(), oc_n);
    let hw = s.hw();
    let mut dx = Tensor::zeros(s);
    let d = dx.data_mut();
    for n in 0..s.n() {
        let g = &dy.data()[n * oc_n * hw..(n + 1) * oc_n * hw];
        let dst = &mut d[n * s.c() * hw..(n + 1) * s.c() * hw];
        for (oc, &(c0, c1, f)) in tc.iter().enumerate() {
            for p in 0..hw {
                let v = g[oc * hw + p];
                dst[c0 * hw + p] += v * (1.0 - f);
                dst[c1 * hw + p] += v * f;
            }
        }
    }
    dx
}
