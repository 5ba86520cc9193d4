//! Layers built from tape primitives, and the forward context that binds a
//! [`ParamStore`] to a [`Tape`].

use crate::error::Result;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{ConvGeom, Mode, Tape, Tensor, Var};

/// One forward (and optionally backward) pass over a model.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    pub mode: Mode,
    leaves: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a mut ParamStore, mode: Mode) -> Self {
        let n = store.len();
        Ctx {
            tape: Tape::new(),
            store,
            mode,
            leaves: vec![None; n],
        }
    }

    /// The tape leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.index()] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.leaf(p.tensor.clone(), p.trainable);
        self.leaves[id.index()] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Backpropagates `loss` and adds the result into the store's gradient
    /// buffers. Parameters the loss does not reach keep their buffers as-is.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let grads = self.tape.backward(loss)?;
        for (i, leaf) in self.leaves.iter().enumerate() {
            let Some(v) = leaf else { continue };
            if let Some(g) = grads.get(*v) {
                self.store.get_mut(ParamId::from_index(i)).grad.add_assign(g);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), [c_out, c_in, kernel, kernel], init, true)?;
        let bias = if bias {
            Some(store.add(&format!("{name}.bias"), [1, c_out, 1, 1], Init::Zeros, true)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            geom,
            c_in,
            c_out,
            kernel,
        })
    }

    /// He-initialised conv without bias, as used before a batch norm.
    pub fn he(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, geom: ConvGeom) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        Self::new(store, name, c_in, c_out, kernel, geom, false, Init::Kaiming { fan_in })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let c = [1, channels, 1, 1];
        Ok(BatchNorm2d {
            gamma: store.add(&format!("{name}.weight"), c, Init::Const(1.0), true)?,
            beta: store.add(&format!("{name}.bias"), c, Init::Zeros, true)?,
            running_mean: store.add(&format!("{name}.running_mean"), c, Init::Zeros, false)?,
            running_var: store.add(&format!("{name}.running_var"), c, Init::Const(1.0), false)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let mut mean = ctx.store.get(self.running_mean).tensor.clone();
        let mut var = ctx.store.get(self.running_var).tensor.clone();
        let y = ctx.tape.batch_norm(x, g, b, &mut mean, &mut var, ctx.mode)?;
        if ctx.mode == Mode::Train {
            ctx.store.get_mut(self.running_mean).tensor = mean;
            ctx.store.get_mut(self.running_var).tensor = var;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let c = [1, channels, 1, 1];
        Ok(LayerNorm2d {
            scale: store.add(&format!("{name}.weight"), c, Init::Const(1.0), true)?,
            shift: store.add(&format!("{name}.bias"), c, Init::Zeros, true)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.param(self.scale);
        let b = ctx.param(self.shift);
        ctx.tape.layer_norm(x, s, b)
    }
}

/// Conv → BN (→ ReLU).
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, geom: ConvGeom) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv2d::he(store, &format!("{name}.conv"), c_in, c_out, kernel, geom)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, relu: bool) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if relu { ctx.tape.relu(y) } else { y })
    }
}

/// ResNet bottleneck: 1×1 reduce → 3×3 (strided / dilated) → 1×1 expand, with
/// a projection shortcut whenever the shape changes.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: ConvBn,
    pub spatial: ConvBn,
    pub expand: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        mid: usize,
        c_out: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let reduce = ConvBn::new(store, &format!("{name}.reduce"), c_in, mid, 1, ConvGeom::new(1, 0))?;
        let spatial = ConvBn::new(
            store,
            &format!("{name}.spatial"),
            mid,
            mid,
            3,
            ConvGeom::dilated(stride, dilation, dilation),
        )?;
        let expand = ConvBn::new(store, &format!("{name}.expand"), mid, c_out, 1, ConvGeom::new(1, 0))?;
        let shortcut = if c_in != c_out || stride != 1 {
            Some(ConvBn::new(
                store,
                &format!("{name}.shortcut"),
                c_in,
                c_out,
                1,
                ConvGeom::new(stride, 0),
            )?)
        } else {
            None
        };
        Ok(Bottleneck {
            reduce,
            spatial,
            expand,
            shortcut,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.reduce.forward(ctx, x, true)?;
        let y = self.spatial.forward(ctx, y, true)?;
        let y = self.expand.forward(ctx, y, false)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(ctx, x, false)?,
            None => x,
        };
        let y = ctx.tape.add(y, skip)?;
        Ok(ctx.tape.relu(y))
    }
}
