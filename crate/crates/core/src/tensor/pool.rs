use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Max pooling with a `k×k` window. Returns the output and, for every output
/// element, the flat input index it was taken from. Ties go to the first
/// element in row-major window order.
pub(super) fn max_pool(x: &Tensor, k: usize, stride: usize, padding: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    let span_h = s.h() + 2 * padding;
    let span_w = s.w() + 2 * padding;
    if k == 0 || stride == 0 || span_h < k || span_w < k || padding >= k {
        return Err(Error::Shape(format!(
            "max pool k={k} stride={stride} pad={padding} invalid for {s:?}"
        )));
    }
    let oh = (span_h - k) / stride + 1;
    let ow = (span_w - k) / stride + 1;
    let out_shape = Shape::new(s.n(), s.c(), oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut arg = Vec::with_capacity(out_shape.numel());
    let data = x.data();
    for nc in 0..s.n() * s.c() {
        let base = nc * s.hw();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= s.h() as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= s.w() as isize {
                            continue;
                        }
                        let i = base + iy as usize * s.w() + ix as usize;
                        if best_i == usize::MAX || data[i] > best {
                            best = data[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, arg))
}

pub(super) fn max_pool_backward(x_shape: Shape, argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(x_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}
