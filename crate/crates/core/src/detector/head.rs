use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx};
use crate::params::{Init, ParamStore};
use crate::tensor::{ConvGeom, Var};

/// Prior probability of the foreground class at initialisation.
const PRIOR: f64 = 0.01;

/// Classification and box branches, each a hidden 3×3 conv + ReLU and a 3×3
/// output conv, shared across all pyramid levels. All weights start at
/// N(0, 0.01²).
#[derive(Clone, Debug)]
pub struct Head {
    pub n_classes: usize,
    pub channels: usize,
    cls_hidden: Conv2d,
    cls_out: Conv2d,
    box_hidden: Conv2d,
    box_out: Conv2d,
}

impl Head {
    pub fn new(store: &mut ParamStore, channels: usize, n_classes: usize) -> Result<Self> {
        let g = ConvGeom::new(1, 1);
        let small = Init::Normal { std: 0.01 };
        let cls_hidden = Conv2d::new(store, "head.cls.hidden", channels, channels, 3, g, true, small)?;
        let cls_out = Conv2d::new(store, "head.cls.out", channels, n_classes, 3, g, true, small)?;
        let box_hidden = Conv2d::new(store, "head.box.hidden", channels, channels, 3, g, true, small)?;
        let box_out = Conv2d::new(store, "head.box.out", channels, 4, 3, g, true, small)?;
        let prior_bias = -((1.0 - PRIOR) / PRIOR).ln();
        if let Some(b) = cls_out.bias {
            store.get_mut(b).tensor.fill(prior_bias);
        }
        Ok(Head {
            n_classes,
            channels,
            cls_hidden,
            cls_out,
            box_hidden,
            box_out,
        })
    }

    /// Per level: class logits `(B, K, H, W)` and box deltas `(B, 4, H, W)`.
    pub fn forward(&self, ctx: &mut Ctx, features: &[Var]) -> Result<Vec<(Var, Var)>> {
        features
            .iter()
            .map(|&p| {
                let c = ctx.tape.shape(p).c();
                if c != self.channels {
                    return Err(Error::Shape(format!(
                        "head expects {} channels, got {c}",
                        self.channels
                    )));
                }
                let h = self.cls_hidden.forward(ctx, p)?;
                let h = ctx.tape.relu(h);
                let cls = self.cls_out.forward(ctx, h)?;
                let h = self.box_hidden.forward(ctx, p)?;
                let h = ctx.tape.relu(h);
                let bx = self.box_out.forward(ctx, h)?;
                Ok((cls, bx))
            })
            .collect()
    }
}
