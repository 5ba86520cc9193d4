//! Shallow per-level feature extractor applied to pyramid images.
//!
//! Each level runs a 7×7 stride-2 conv, a 2×2 max pool, and one bottleneck
//! residual block that lifts the channel count to `c1·2^level`. The total
//! stride of 4 puts `F_level` on the same grid as the backbone stage it is
//! fused into.

use crate::error::{Error, Result};
use crate::nn::{Bottleneck, ConvBn, Ctx};
use crate::params::ParamStore;
use crate::tensor::{ConvGeom, Var};

pub const STEM_STRIDE: usize = 2;

#[derive(Clone, Debug)]
pub struct IpgTransformLevel {
    pub level: usize,
    pub out_channels: usize,
    stem: ConvBn,
    block: Bottleneck,
    stem_stride: usize,
}

/// Width of the 7×7 stem inside each transform level.
pub fn stem_width(c1: usize) -> usize {
    (c1 / 2).max(1)
}

impl IpgTransformLevel {
    pub fn new(store: &mut ParamStore, name: &str, level: usize, c1: usize) -> Result<Self> {
        Self::with_stem_stride(store, name, level, c1, STEM_STRIDE)
    }

    /// Same as [`IpgTransformLevel::new`] with a non-standard stem stride.
    /// Anything other than 2 breaks alignment with the backbone.
    pub fn with_stem_stride(
        store: &mut ParamStore,
        name: &str,
        level: usize,
        c1: usize,
        stem_stride: usize,
    ) -> Result<Self> {
        let width = stem_width(c1);
        let out_channels = c1 << level;
        let stem = ConvBn::new(store, &format!("{name}.stem"), 3, width, 7, ConvGeom::new(stem_stride, 3))?;
        let block = Bottleneck::new(store, &format!("{name}.block"), width, width, out_channels, 1, 1)?;
        Ok(IpgTransformLevel {
            level,
            out_channels,
            stem,
            block,
            stem_stride,
        })
    }

    /// Output stride relative to the level's own input image.
    pub fn stride(&self) -> usize {
        self.stem_stride * 2
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<Var> {
        let (h, w) = ctx.tape.shape(image).spatial();
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!(
                "pyramid level {} image {h}x{w} is not divisible by 4",
                self.level
            )));
        }
        let y = self.stem.forward(ctx, image, true)?;
        let y = ctx.tape.max_pool2(y)?;
        self.block.forward(ctx, y)
    }
}
