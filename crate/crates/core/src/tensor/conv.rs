use super::{gemm, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and dilation of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvGeom {
            stride,
            padding,
            dilation: 1,
        }
    }

    pub fn dilated(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            stride,
            padding,
            dilation,
        }
    }

    pub fn out_dim(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self, k: usize) -> bool {
        k == 1 && self.stride == 1 && self.padding == 0
    }
}

pub(super) fn output_shape(x: Shape, w: Shape, bias: Option<Shape>, g: ConvGeom) -> Result<Shape> {
    if w.h() != w.w() {
        return Err(Error::Shape(format!("conv kernel must be square, got {w:?}")));
    }
    if w.c() != x.c() {
        return Err(Error::Shape(format!(
            "conv input has {} channels but weight {w:?} expects {}",
            x.c(),
            w.c()
        )));
    }
    if let Some(b) = bias {
        if b.numel() != w.n() {
            return Err(Error::Shape(format!("conv bias {b:?} does not match {} outputs", w.n())));
        }
    }
    let k = w.h();
    match (g.out_dim(x.h(), k), g.out_dim(x.w(), k)) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(Shape::new(x.n(), w.n(), oh, ow)),
        _ => Err(Error::Shape(format!(
            "conv of {x:?} with kernel {k} and {g:?} has no valid output positions"
        ))),
    }
}

struct Plan {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    g: ConvGeom,
}

impl Plan {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (s, p, d) = (self.g.stride as isize, self.g.padding as isize, self.g.dilation as isize);
        let hw_out = self.cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ky as isize * d;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, out) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize * d;
                            *out = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (s, p, d) = (self.g.stride as isize, self.g.padding as isize, self.g.dilation as isize);
        let hw_out = self.cols();
        for ci in 0..self.c_in {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..self.oh {
                        let iy = oy as isize * s - p + ky as isize * d;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = iy as usize * self.w;
                        for ox in 0..self.ow {
                            let ix = ox as isize * s - p + kx as isize * d;
                            if ix >= 0 && ix < self.w as isize {
                                plane[base + ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn plan(x: Shape, w: Shape, out: Shape, g: ConvGeom) -> Plan {
    Plan {
        c_in: x.c(),
        h: x.h(),
        w: x.w(),
        k: w.h(),
        oh: out.h(),
        ow: out.w(),
        g,
    }
}

pub(super) fn forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeom) -> Result<Tensor> {
    let out_shape = output_shape(x.shape(), w.shape(), bias.map(|b| b.shape()), g)?;
    let pl = plan(x.shape(), w.shape(), out_shape, g);
    let c_out = w.shape().n();
    let (rows, cols_n) = (pl.rows(), pl.cols());
    let in_len = x.shape().c() * x.shape().hw();
    let out_len = c_out * cols_n;
    let mut out = vec![0.0; x.shape().n() * out_len];
    let pointwise = g.is_pointwise(pl.k);
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; rows * cols_n] };
    for n in 0..x.shape().n() {
        let xin = &x.data()[n * in_len..(n + 1) * in_len];
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(cols_n).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let src: &[f64] = if pointwise {
            xin
        } else {
            pl.im2col(xin, &mut cols);
            &cols
        };
        gemm(c_out, rows, cols_n, w.data(), false, src, false, dst, beta);
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(super) fn backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    g: ConvGeom,
    dy: &Tensor,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let out_shape = dy.shape();
    let pl = plan(x.shape(), w.shape(), out_shape, g);
    let c_out = w.shape().n();
    let (rows, cols_n) = (pl.rows(), pl.cols());
    let in_len = x.shape().c() * x.shape().hw();
    let out_len = c_out * cols_n;
    let pointwise = g.is_pointwise(pl.k);

    let mut dx = want_dx.then(|| vec![0.0; x.numel()]);
    let mut dw = want_dw.then(|| vec![0.0; w.numel()]);
    let mut db = has_bias.then(|| vec![0.0; c_out]);
    let mut cols = vec![0.0; if pointwise { 0 } else { rows * cols_n }];
    let mut dcols = vec![0.0; if pointwise || !want_dx { 0 } else { rows * cols_n }];

    for n in 0..x.shape().n() {
        let dyn_ = &dy.data()[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (co, chunk) in dyn_.chunks(cols_n).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        let xin = &x.data()[n * in_len..(n + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let src: &[f64] = if pointwise {
                xin
            } else {
                pl.im2col(xin, &mut cols);
                &cols
            };
            // dW += dY · colsᵀ
            gemm(c_out, cols_n, rows, dyn_, false, src, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if pointwise {
                gemm(rows, c_out, cols_n, w.data(), true, dyn_, false, dxn, 1.0);
            } else {
                gemm(rows, c_out, cols_n, w.data(), true, dyn_, false, &mut dcols, 0.0);
                pl.col2im(&dcols, dxn);
            }
        }
    }
    let wrap = |v: Vec<f64>, s: Shape| Tensor::from_vec(s, v).expect("gradient shape");
    (
        dx.map(|v| wrap(v, x.shape())),
        dw.map(|v| wrap(v, w.shape())),
        db.map(|v| wrap(v, Shape::new(1, c_out, 1, 1))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as an independent reference.
    fn direct(x: &Tensor, w: &Tensor, g: ConvGeom) -> Tensor {
        let out = output_shape(x.shape(), w.shape(), None, g).unwrap();
        let k = w.shape().h();
        Tensor::from_fn(out, |n, co, oy, ox| {
            let mut acc = 0.0;
            for ci in 0..x.shape().c() {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < x.shape().h() && (ix as usize) < x.shape().w() {
                            acc += x.at(n, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn im2col_path_matches_direct_loops() {
        let x = Tensor::from_fn([2, 3, 7, 6], |n, c, y, x| ((n * 7 + c * 5 + y * 3 + x) as f64 * 0.31).sin());
        for (k, g) in [
            (3, ConvGeom::new(1, 1)),
            (3, ConvGeom::new(2, 1)),
            (3, ConvGeom::dilated(1, 2, 2)),
            (1, ConvGeom::new(1, 0)),
            (1, ConvGeom::new(2, 0)),
            (5, ConvGeom::new(2, 2)),
        ] {
            let w = Tensor::from_fn([4, 3, k, k], |a, b, c, d| ((a * 11 + b * 7 + c * 3 + d) as f64 * 0.17).cos());
            let got = forward(&x, &w, None, g).unwrap();
            let want = direct(&x, &w, g);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        assert!(forward(&x, &Tensor::zeros([1, 3, 3, 3]), None, ConvGeom::new(1, 1)).is_err());
        assert!(forward(&x, &Tensor::zeros([1, 2, 7, 7]), None, ConvGeom::new(1, 0)).is_err());
    }
}
