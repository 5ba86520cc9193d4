//! Fusion of a pyramid feature `F` into a backbone feature `R`.
//!
//! All three variants start by resampling `F` along channels (`CT`) to the
//! width of `R`, then project both branches with pointwise maps `W_s`, `W_m`:
//!
//! * sum:     `O = W·[W_s·CT(F) + W_m·R]`
//! * product: `O = LN{[W_s·CT(F)] * [W_m·R] + R}`
//! * concat:  `O = W·Cat[W_s·CT(F), W_m·R]`
//!
//! `W_s` starts at zero and `W_m`, `W` start as identities, so a fresh fused
//! network reproduces its plain backbone (up to the LN in the product case).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, LayerNorm2d};
use crate::params::{Init, ParamStore};
use crate::tensor::{ConvGeom, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Sum,
    Product,
    Concat,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Sum, FusionKind::Product, FusionKind::Concat];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Sum => "sum",
            FusionKind::Product => "product",
            FusionKind::Concat => "concat",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(FusionKind::Sum),
            "product" => Ok(FusionKind::Product),
            "concat" => Ok(FusionKind::Concat),
            other => Err(Error::Config(format!(
                "unknown fusion variant `{other}` (expected sum, product or concat)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub kind: FusionKind,
    pub stage: usize,
    pub channels: usize,
    pub w_s: Conv2d,
    pub w_m: Conv2d,
    pub w: Option<Conv2d>,
    pub ln: Option<LayerNorm2d>,
}

impl Fusion {
    /// `channels` is the width of `R` (and of the output).
    pub fn new(store: &mut ParamStore, name: &str, kind: FusionKind, stage: usize, channels: usize) -> Result<Self> {
        let pw = ConvGeom::new(1, 0);
        let c = channels;
        let w_s = Conv2d::new(store, &format!("{name}.w_s"), c, c, 1, pw, false, Init::Zeros)?;
        let w_m = Conv2d::new(store, &format!("{name}.w_m"), c, c, 1, pw, false, Init::Identity { offset: 0 })?;
        let (w, ln) = match kind {
            FusionKind::Sum => (
                Some(Conv2d::new(store, &format!("{name}.w"), c, c, 1, pw, true, Init::Identity { offset: 0 })?),
                None,
            ),
            FusionKind::Concat => (
                Some(Conv2d::new(store, &format!("{name}.w"), 2 * c, c, 1, pw, true, Init::Identity { offset: c })?),
                None,
            ),
            FusionKind::Product => (None, Some(LayerNorm2d::new(store, &format!("{name}.ln"), c)?)),
        };
        Ok(Fusion {
            kind,
            stage,
            channels,
            w_s,
            w_m,
            w,
            ln,
        })
    }

    fn check_alignment(&self, ctx: &Ctx, f: Var, r: Var) -> Result<()> {
        let fs = ctx.tape.shape(f);
        let rs = ctx.tape.shape(r);
        if fs.spatial() != rs.spatial() || fs.n() != rs.n() {
            return Err(Error::Alignment {
                stage: self.stage,
                pyramid_hw: fs.spatial(),
                backbone_hw: rs.spatial(),
            });
        }
        if rs.c() != self.channels {
            return Err(Error::Shape(format!(
                "fusion at stage {} expects {} backbone channels, got {rs:?}",
                self.stage, self.channels
            )));
        }
        Ok(())
    }

    /// `W_s·CT(F)` and `W_m·R`.
    fn branches(&self, ctx: &mut Ctx, f: Var, r: Var) -> Result<(Var, Var)> {
        self.check_alignment(ctx, f, r)?;
        let ct = ctx.tape.channel_interp(f, self.channels)?;
        let a = self.w_s.forward(ctx, ct)?;
        let b = self.w_m.forward(ctx, r)?;
        Ok((a, b))
    }

    pub fn forward(&self, ctx: &mut Ctx, f: Var, r: Var) -> Result<Var> {
        match self.kind {
            FusionKind::Sum => self.fuse_sum(ctx, f, r),
            FusionKind::Product => self.fuse_residual_product(ctx, f, r),
            FusionKind::Concat => self.fuse_concat(ctx, f, r),
        }
    }

    fn outer(&self) -> Result<&Conv2d> {
        self.w
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} fusion has no outer projection", self.kind)))
    }

    pub fn fuse_sum(&self, ctx: &mut Ctx, f: Var, r: Var) -> Result<Var> {
        let (a, b) = self.branches(ctx, f, r)?;
        let s = ctx.tape.add(a, b)?;
        self.outer()?.forward(ctx, s)
    }

    pub fn fuse_residual_product(&self, ctx: &mut Ctx, f: Var, r: Var) -> Result<Var> {
        let ln = self
            .ln
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} fusion has no layer norm", self.kind)))?;
        let (a, b) = self.branches(ctx, f, r)?;
        let p = ctx.tape.mul(a, b)?;
        let s = ctx.tape.add(p, r)?;
        ln.forward(ctx, s)
    }

    pub fn fuse_concat(&self, ctx: &mut Ctx, f: Var, r: Var) -> Result<Var> {
        let (a, b) = self.branches(ctx, f, r)?;
        let cat = ctx.tape.concat_channels(a, b)?;
        self.outer()?.forward(ctx, cat)
    }
}
