use super::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Saved state of a normalisation, laid out like the input.
pub(super) struct Normalized {
    pub xhat: Vec<f64>,
    /// One entry per normalisation group.
    pub inv_std: Vec<f64>,
}

/// Per-channel statistics over (batch, H, W).
pub(super) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(super) fn batch_stats(x: &Tensor) -> BatchStats {
    let s = x.shape();
    let m = (s.n() * s.hw()) as f64;
    let mut mean = vec![0.0; s.c()];
    let mut var = vec![0.0; s.c()];
    for n in 0..s.n() {
        for c in 0..s.c() {
            let off = (n * s.c() + c) * s.hw();
            mean[c] += x.data()[off..off + s.hw()].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for n in 0..s.n() {
        for c in 0..s.c() {
            let off = (n * s.c() + c) * s.hw();
            var[c] += x.data()[off..off + s.hw()]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    BatchStats { mean, var }
}

/// `y = gamma·(x − mean)/sqrt(var + eps) + beta` per channel.
pub(super) fn batch_norm_apply(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> (Tensor, Normalized) {
    let s = x.shape();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.numel()];
    let mut y = vec![0.0; x.numel()];
    for n in 0..s.n() {
        for c in 0..s.c() {
            let off = (n * s.c() + c) * s.hw();
            for i in off..off + s.hw() {
                let h = (x.data()[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        Tensor::from_vec(s, y).expect("same shape"),
        Normalized { xhat, inv_std },
    )
}

/// Backward of train-mode batch norm: returns (dx, dgamma, dbeta).
pub(super) fn batch_norm_backward(
    shape: Shape,
    gamma: &[f64],
    saved: &Normalized,
    dy: &Tensor,
    batch_stats: bool,
) -> (Tensor, Tensor, Tensor) {
    let s = shape;
    let m = (s.n() * s.hw()) as f64;
    let mut dgamma = vec![0.0; s.c()];
    let mut dbeta = vec![0.0; s.c()];
    for n in 0..s.n() {
        for c in 0..s.c() {
            let off = (n * s.c() + c) * s.hw();
            for i in off..off + s.hw() {
                dbeta[c] += dy.data()[i];
                dgamma[c] += dy.data()[i] * saved.xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; s.numel()];
    for n in 0..s.n() {
        for c in 0..s.c() {
            let off = (n * s.c() + c) * s.hw();
            let k = gamma[c] * saved.inv_std[c];
            for i in off..off + s.hw() {
                dx[i] = if batch_stats {
                    k * (dy.data()[i] - dbeta[c] / m - saved.xhat[i] * dgamma[c] / m)
                } else {
                    k * dy.data()[i]
                };
            }
        }
    }
    let cs = Shape::new(1, s.c(), 1, 1);
    (
        Tensor::from_vec(s, dx).expect("shape"),
        Tensor::from_vec(cs, dgamma).expect("shape"),
        Tensor::from_vec(cs, dbeta).expect("shape"),
    )
}

/// Normalises across channels at each (batch, y, x) position.
pub(super) fn layer_norm_forward(x: &Tensor, scale: &[f64], shift: &[f64]) -> (Tensor, Normalized) {
    let s = x.shape();
    let (c_n, hw) = (s.c(), s.hw());
    let mut xhat = vec![0.0; x.numel()];
    let mut y = vec![0.0; x.numel()];
    let mut inv_std = Vec::with_capacity(s.n() * hw);
    let d = x.data();
    for n in 0..s.n() {
        let base = n * c_n * hw;
        for p in 0..hw {
            let mean = (0..c_n).map(|c| d[base + c * hw + p]).sum::<f64>() / c_n as f64;
            let var = (0..c_n).map(|c| (d[base + c * hw + p] - mean).powi(2)).sum::<f64>() / c_n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..c_n {
                let i = base + c * hw + p;
                xhat[i] = (d[i] - mean) * is;
                y[i] = scale[c] * xhat[i] + shift[c];
            }
        }
    }
    (Tensor::from_vec(s, y).expect("shape"), Normalized { xhat, inv_std })
}

pub(super) fn layer_norm_backward(
    shape: Shape,
    scale: &[f64],
    saved: &Normalized,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = shape;
    let (c_n, hw) = (s.c(), s.hw());
    let mut dscale = vec![0.0; c_n];
    let mut dshift = vec![0.0; c_n];
    let mut dx = vec![0.0; s.numel()];
    let g = dy.data();
    for n in 0..s.n() {
        let base = n * c_n * hw;
        for p in 0..hw {
            let mut sum_dh = 0.0;
            let mut sum_dh_h = 0.0;
            for c in 0..c_n {
                let i = base + c * hw + p;
                dscale[c] += g[i] * saved.xhat[i];
                dshift[c] += g[i];
                let dh = g[i] * scale[c];
                sum_dh += dh;
                sum_dh_h += dh * saved.xhat[i];
            }
            let is = saved.inv_std[n * hw + p];
            let m = c_n as f64;
            for c in 0..c_n {
                let i = base + c * hw + p;
                let dh = g[i] * scale[c];
                dx[i] = is * (dh - sum_dh / m - saved.xhat[i] * sum_dh_h / m);
            }
        }
    }
    let cs = Shape::new(1, c_n, 1, 1);
    (
        Tensor::from_vec(s, dx).expect("shape"),
        Tensor::from_vec(cs, dscale).expect("shape"),
        Tensor::from_vec(cs, dshift).expect("shape"),
    )
}
