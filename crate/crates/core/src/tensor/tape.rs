use super::conv::{self, ConvGeom};
use super::interp::{self, channel_interp_backward, resize_bilinear_backward};
use super::loss::{focal_term, smooth_l1_term};
use super::norm::{self, Normalized, BN_MOMENTUM};
use super::pool;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train mode uses batch statistics in batch norm and updates running
/// statistics; eval mode uses the running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Var, Var),
    SliceChannels {
        x: Var,
        start: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: Normalized,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        saved: Normalized,
    },
    Resize(Var),
    ChannelInterp(Var),
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
    /// Elementwise loss whose per-element gradient was computed in forward.
    ElementLoss {
        x: Var,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it
    /// or was recorded without `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf value. Gradients are collected for it only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = pool::max_pool(self.value(x), k, stride, padding)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// 2×2, stride-2 max pooling over even spatial dims.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
            return Err(Error::Shape(format!("2x2 max pooling needs even spatial dims, got {s:?}")));
        }
        self.max_pool(x, 2, 2, 0)
    }

    /// Branch taken by every piecewise-linear op on the tape (ReLU signs and
    /// max-pool winners). Two evaluations with equal patterns lie on the
    /// same linear piece of those ops.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(_) => {
                    for chunk in node.value.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |b, (i, &v)| b | (((v > 0.0) as u64) << i));
                        out.push(bits);
                    }
                }
                Op::MaxPool { argmax, .. } => out.extend(argmax.iter().map(|&a| a as u64)),
                _ => {}
            }
        }
        out
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x), &[x])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what} needs identical shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k), &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.spatial() != sb.spatial() {
            return Err(Error::Shape(format!("cannot concatenate {sa:?} and {sb:?} along channels")));
        }
        let (hw, ca, cb) = (sa.hw(), sa.c(), sb.c());
        let mut data = Vec::with_capacity(sa.numel() + sb.numel());
        for n in 0..sa.n() {
            data.extend_from_slice(&self.value(a).data()[n * ca * hw..(n + 1) * ca * hw]);
            data.extend_from_slice(&self.value(b).data()[n * cb * hw..(n + 1) * cb * hw]);
        }
        let out = Tensor::from_vec([sa.n(), ca + cb, sa.h(), sa.w()], data)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.push(out, Op::SliceChannels { x, start }, &[x]))
    }

    fn per_channel(&self, p: Var, channels: usize, what: &str) -> Result<()> {
        if self.shape(p).numel() != channels {
            return Err(Error::Shape(format!(
                "{what} parameter {:?} does not match {channels} channels",
                self.shape(p)
            )));
        }
        Ok(())
    }

    /// Batch normalisation. In train mode the running statistics are updated
    /// in place with momentum [`BN_MOMENTUM`] (running variance uses the
    /// unbiased estimate, normalisation uses the population variance).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor,
        running_var: &mut Tensor,
        mode: Mode,
    ) -> Result<Var> {
        let c = self.shape(x).c();
        self.per_channel(gamma, c, "batch norm gamma")?;
        self.per_channel(beta, c, "batch norm beta")?;
        if running_mean.numel() != c || running_var.numel() != c {
            return Err(Error::Shape(format!("batch norm running stats do not match {c} channels")));
        }
        let (out, saved) = match mode {
            Mode::Train => {
                let stats = norm::batch_stats(self.value(x));
                let (out, saved) = norm::batch_norm_apply(
                    self.value(x),
                    self.value(gamma).data(),
                    self.value(beta).data(),
                    &stats.mean,
                    &stats.var,
                );
                let m = (self.shape(x).n() * self.shape(x).hw()) as f64;
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for i in 0..c {
                    let rm = &mut running_mean.data_mut()[i];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * stats.mean[i];
                    let rv = &mut running_var.data_mut()[i];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * stats.var[i] * unbias;
                }
                (out, saved)
            }
            Mode::Eval => norm::batch_norm_apply(
                self.value(x),
                self.value(gamma).data(),
                self.value(beta).data(),
                running_mean.data(),
                running_var.data(),
            ),
        };
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            saved,
            batch_stats: mode == Mode::Train,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    /// Layer norm across channels at every spatial position, followed by a
    /// per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = self.shape(x).c();
        self.per_channel(scale, c, "layer norm scale")?;
        self.per_channel(shift, c, "layer norm shift")?;
        let (out, saved) = norm::layer_norm_forward(self.value(x), self.value(scale).data(), self.value(shift).data());
        Ok(self.push(out, Op::LayerNorm { x, scale, shift, saved }, &[x, scale, shift]))
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = interp::resize_bilinear(self.value(x), out_h, out_w)?;
        Ok(self.push(out, Op::Resize(x), &[x]))
    }

    pub fn channel_interp(&mut self, x: Var, out_channels: usize) -> Result<Var> {
        let out = interp::channel_interp(self.value(x), out_channels)?;
        Ok(self.push(out, Op::ChannelInterp(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `Σ x·weights`, a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        if weights.shape() != self.shape(x) {
            return Err(Error::Shape(format!(
                "weighted_sum weights {:?} do not match {:?}",
                weights.shape(),
                self.shape(x)
            )));
        }
        let s: f64 = self.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    fn check_aux(&self, x: Var, t: &Tensor, what: &str) -> Result<()> {
        if t.shape() != self.shape(x) {
            return Err(Error::Shape(format!(
                "{what} {:?} does not match input {:?}",
                t.shape(),
                self.shape(x)
            )));
        }
        Ok(())
    }

    /// Sigmoid focal loss summed over elements with nonzero `weights`,
    /// divided by `normalizer`. `targets` are 0/1.
    pub fn focal_loss(
        &mut self,
        logits: Var,
        targets: &Tensor,
        weights: &Tensor,
        alpha: f64,
        gamma: f64,
        normalizer: f64,
    ) -> Result<Var> {
        self.check_aux(logits, targets, "focal targets")?;
        self.check_aux(logits, weights, "focal weights")?;
        let mut total = 0.0;
        let mut grad = vec![0.0; targets.numel()];
        for (i, ((&x, &t), &w)) in self
            .value(logits)
            .data()
            .iter()
            .zip(targets.data())
            .zip(weights.data())
            .enumerate()
        {
            if w == 0.0 {
                continue;
            }
            let (l, g) = focal_term(x, t, alpha, gamma);
            total += w * l;
            grad[i] = w * g / normalizer;
        }
        let out = Tensor::scalar(total / normalizer);
        Ok(self.push(out, Op::ElementLoss { x: logits, grad }, &[logits]))
    }

    /// Smooth-L1 between `pred` and `target` over elements where `mask` is
    /// nonzero, divided by `normalizer`.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor, mask: &Tensor, beta: f64, normalizer: f64) -> Result<Var> {
        self.check_aux(pred, target, "smooth-l1 target")?;
        self.check_aux(pred, mask, "smooth-l1 mask")?;
        let mut total = 0.0;
        let mut grad = vec![0.0; target.numel()];
        for (i, ((&p, &t), &m)) in self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .enumerate()
        {
            if m == 0.0 {
                continue;
            }
            let (l, g) = smooth_l1_term(p - t, beta);
            total += m * l;
            grad[i] = m * g / normalizer;
        }
        let out = Tensor::scalar(total / normalizer);
        Ok(self.push(out, Op::ElementLoss { x: pred, grad }, &[pred]))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate additively
    /// when a value is used more than once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(&node.op, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::backward(
                    self.value(x),
                    self.value(w),
                    b.is_some_and(|b| self.needs(b)),
                    geom,
                    dy,
                    self.needs(x),
                    self.needs(w),
                );
                if let Some(dx) = dx {
                    acc(x, dx);
                }
                if let Some(dw) = dw {
                    acc(w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(b, db.reshape(self.shape(b)).expect("bias shape"));
                }
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, pool::max_pool_backward(self.shape(*x), argmax, dy));
            }
            &Op::Relu(x) => {
                let data = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                acc(x, Tensor::from_vec(dy.shape(), data).expect("shape"));
            }
            &Op::Add(a, b) => {
                acc(a, dy.clone());
                acc(b, dy.clone());
            }
            &Op::Mul(a, b) => {
                let prod = |other: Var| {
                    let data = self.value(other).data().iter().zip(dy.data()).map(|(o, g)| o * g).collect();
                    Tensor::from_vec(dy.shape(), data).expect("shape")
                };
                let (da, db) = (prod(b), prod(a));
                acc(a, da);
                acc(b, db);
            }
            &Op::Scale(x, k) => acc(x, dy.map(|g| g * k)),
            &Op::Concat(a, b) => {
                let ca = self.shape(a).c();
                let cb = self.shape(b).c();
                acc(a, dy.slice_channels(0, ca).expect("slice"));
                acc(b, dy.slice_channels(ca, cb).expect("slice"));
            }
            &Op::SliceChannels { x, start } => {
                let s = self.shape(x);
                let len = dy.shape().c();
                let hw = s.hw();
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n() {
                    let dst = (n * s.c() + start) * hw;
                    dx.data_mut()[dst..dst + len * hw].copy_from_slice(&dy.data()[n * len * hw..(n + 1) * len * hw]);
                }
                acc(x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats,
            } => {
                let (dx, dg, db) =
                    norm::batch_norm_backward(self.shape(*x), self.value(*gamma).data(), saved, dy, *batch_stats);
                acc(*x, dx);
                acc(*gamma, dg.reshape(self.shape(*gamma)).expect("shape"));
                acc(*beta, db.reshape(self.shape(*beta)).expect("shape"));
            }
            Op::LayerNorm { x, scale, shift, saved } => {
                let (dx, ds, db) = norm::layer_norm_backward(self.shape(*x), self.value(*scale).data(), saved, dy);
                acc(*x, dx);
                acc(*scale, ds.reshape(self.shape(*scale)).expect("shape"));
                acc(*shift, db.reshape(self.shape(*shift)).expect("shape"));
            }
            &Op::Resize(x) => acc(x, resize_bilinear_backward(self.shape(x), dy)),
            &Op::ChannelInterp(x) => acc(x, channel_interp_backward(self.shape(x), dy)),
            &Op::Sum(x) => {
                let g = dy.data()[0];
                acc(x, Tensor::full(self.shape(x), g));
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.data()[0];
                acc(*x, weights.map(|w| w * g));
            }
            Op::ElementLoss { x, grad } => {
                let g = dy.data()[0];
                let data = grad.iter().map(|v| v * g).collect();
                acc(*x, Tensor::from_vec(self.shape(*x), data).expect("shape"));
            }
        }
    }
}
