//! Staged ResNet-style backbone, its configuration, and the FPN top-down
//! pathway.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::nn::{Bottleneck, Conv2d, ConvBn, Ctx};
use crate::params::{Init, ParamStore};
use crate::tensor::{ConvGeom, Var};

/// Stride of the fixed stem (7×7/2 conv then 3×3/2 max pool).
pub const STEM_STRIDE: usize = 4;

/// Architecture of an IPG network (and of its plain counterpart, which is
/// the same config with no fusion stages).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channel count of stage 1; stage `s` has `c1·2^(s-1)`, capped at stage 4.
    pub c1: usize,
    pub n_stages: usize,
    /// Keep the spatial size of the last three stages constant (7 stages only).
    pub keep_last3: bool,
    pub fusion_variant: FusionKind,
    /// 1-indexed stages receiving pyramid features; stage `s` uses level `s-1`.
    pub fusion_stages: Vec<usize>,
    pub pyramid_levels: usize,
    pub fpn_channels: usize,
    pub n_classes: usize,
    pub blocks_per_stage: usize,
    /// Feed only the last `k` stage outputs to the FPN (all when unset).
    pub fpn_last_k: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            c1: 16,
            n_stages: 5,
            keep_last3: false,
            fusion_variant: FusionKind::Sum,
            fusion_stages: vec![3],
            pyramid_levels: 4,
            fpn_channels: 32,
            n_classes: 3,
            blocks_per_stage: 2,
            fpn_last_k: None,
        }
    }
}

impl NetworkConfig {
    /// The same network with fusion switched off.
    pub fn plain(&self) -> Self {
        NetworkConfig {
            fusion_stages: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.c1 < 4 || !self.c1.is_multiple_of(4) {
            return bad(format!("c1 must be a positive multiple of 4, got {}", self.c1));
        }
        if !(4..=7).contains(&self.n_stages) {
            return bad(format!("n_stages must be in 4..=7, got {}", self.n_stages));
        }
        if self.keep_last3 && self.n_stages != 7 {
            return bad(format!(
                "keep_last3 holds stages 5..7 at the stage-4 stride and needs n_stages = 7, got {}",
                self.n_stages
            ));
        }
        if self.pyramid_levels < 2 {
            return bad(format!("pyramid_levels must be >= 2, got {}", self.pyramid_levels));
        }
        if self.fpn_channels == 0 || self.n_classes == 0 || self.blocks_per_stage == 0 {
            return bad("fpn_channels, n_classes and blocks_per_stage must be >= 1".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.fusion_stages {
            if s == 0 || s > self.n_stages {
                return bad(format!("fusion stage {s} outside 1..={}", self.n_stages));
            }
            if s > self.pyramid_levels {
                return bad(format!(
                    "fusion stage {s} needs pyramid level {} but only {} levels are built",
                    s - 1,
                    self.pyramid_levels
                ));
            }
            if !seen.insert(s) {
                return bad(format!("fusion stage {s} listed twice"));
            }
        }
        if let Some(k) = self.fpn_last_k {
            if k == 0 || k > self.n_stages {
                return bad(format!("fpn_last_k = {k} outside 1..={}", self.n_stages));
            }
        }
        Ok(())
    }

    fn is_kept(&self, stage: usize) -> bool {
        self.keep_last3 && stage > 4 && stage + 2 >= self.n_stages
    }

    /// Output stride of 1-indexed `stage` relative to the input image.
    pub fn stage_stride(&self, stage: usize) -> usize {
        (2..=stage).fold(STEM_STRIDE, |acc, s| if self.is_kept(s) { acc } else { acc * 2 })
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.c1 << (stage.min(4) - 1)
    }

    /// (stride, dilation) of the first block's 3×3 conv in `stage`.
    pub fn stage_geometry(&self, stage: usize) -> (usize, usize) {
        if stage == 1 {
            (1, 1)
        } else if self.is_kept(stage) {
            (1, 2)
        } else {
            (2, 1)
        }
    }

    /// Input side lengths must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        let deepest = self.stage_stride(self.n_stages);
        deepest.max(1 << (self.pyramid_levels - 1))
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.input_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
            return Err(Error::Precondition(format!(
                "input {h}x{w} must be a multiple of {m} for this configuration"
            )));
        }
        Ok(())
    }

    /// Stages whose outputs feed the FPN.
    pub fn fpn_stages(&self) -> std::ops::RangeInclusive<usize> {
        let k = self.fpn_last_k.unwrap_or(self.n_stages);
        (self.n_stages - k + 1)..=self.n_stages
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, config: &NetworkConfig) -> Result<Self> {
        let stem = ConvBn::new(store, "backbone.stem", 3, config.c1, 7, ConvGeom::new(2, 3))?;
        let mut stages = Vec::with_capacity(config.n_stages);
        let mut c_in = config.c1;
        for s in 1..=config.n_stages {
            let c_out = config.stage_channels(s);
            let (stride, dilation) = config.stage_geometry(s);
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for b in 0..config.blocks_per_stage {
                let (st, cin) = if b == 0 { (stride, c_in) } else { (1, c_out) };
                blocks.push(Bottleneck::new(
                    store,
                    &format!("backbone.stage{s}.block{b}"),
                    cin,
                    c_out / 4,
                    c_out,
                    st,
                    dilation,
                )?);
            }
            stages.push(blocks);
            c_in = c_out;
        }
        Ok(Backbone { stem, stages })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn forward_stem(&self, ctx: &mut Ctx, image: Var) -> Result<Var> {
        let y = self.stem.forward(ctx, image, true)?;
        ctx.tape.max_pool(y, 3, 2, 1)
    }

    /// Runs 1-indexed `stage` on `x`.
    pub fn forward_stage(&self, ctx: &mut Ctx, stage: usize, x: Var) -> Result<Var> {
        let blocks = self
            .stages
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("no stage {stage}")))?;
        blocks.iter().try_fold(x, |y, b| b.forward(ctx, y))
    }
}

/// The final `k` stage outputs.
pub fn last_k_outputs<T: Clone>(outputs: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 || k > outputs.len() {
        return Err(Error::Config(format!(
            "cannot take the last {k} of {} stage outputs",
            outputs.len()
        )));
    }
    Ok(outputs[outputs.len() - k..].to_vec())
}

/// Top-down feature pyramid: `P_top = L(C_top)`,
/// `P_s = resize(P_{s+1}) + L(C_s)`, each followed by a 3×3 smoothing conv.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub laterals: Vec<Conv2d>,
    pub smooths: Vec<Conv2d>,
    pub channels: usize,
}

impl Fpn {
    pub fn new(store: &mut ParamStore, in_channels: &[usize], stage_ids: &[usize], channels: usize) -> Result<Self> {
        let mut laterals = Vec::new();
        let mut smooths = Vec::new();
        for (&c, &s) in in_channels.iter().zip(stage_ids) {
            laterals.push(Conv2d::new(
                store,
                &format!("fpn.lateral{s}"),
                c,
                channels,
                1,
                ConvGeom::new(1, 0),
                true,
                Init::Normal { std: (1.0 / c as f64).sqrt() },
            )?);
            smooths.push(Conv2d::new(
                store,
                &format!("fpn.smooth{s}"),
                channels,
                channels,
                3,
                ConvGeom::new(1, 1),
                true,
                Init::Normal { std: (1.0 / (9 * channels) as f64).sqrt() },
            )?);
        }
        Ok(Fpn {
            laterals,
            smooths,
            channels,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, features: &[Var]) -> Result<Vec<Var>> {
        if features.len() != self.laterals.len() {
            return Err(Error::Shape(format!(
                "FPN built for {} inputs, got {}",
                self.laterals.len(),
                features.len()
            )));
        }
        let n = features.len();
        let mut inner: Vec<Option<Var>> = vec![None; n];
        for i in (0..n).rev() {
            let lat = self.laterals[i].forward(ctx, features[i])?;
            inner[i] = Some(match inner.get(i + 1).copied().flatten() {
                Some(above) => {
                    let (h, w) = ctx.tape.shape(lat).spatial();
                    let up = ctx.tape.resize_bilinear(above, h, w)?;
                    ctx.tape.add(up, lat)?
                }
                None => lat,
            });
        }
        inner
            .into_iter()
            .zip(&self.smooths)
            .map(|(v, conv)| conv.forward(ctx, v.expect("filled above")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_stage_schedule() {
        let c = NetworkConfig {
            n_stages: 4,
            ..Default::default()
        };
        let strides: Vec<_> = (1..=4).map(|s| c.stage_stride(s)).collect();
        let chans: Vec<_> = (1..=4).map(|s| c.stage_channels(s)).collect();
        assert_eq!(strides, vec![4, 8, 16, 32]);
        assert_eq!(chans, vec![16, 32, 64, 128]);
        assert_eq!(c.input_multiple(), 32);
    }

    #[test]
    fn keep_schedule_holds_last_three() {
        let c = NetworkConfig {
            n_stages: 7,
            keep_last3: true,
            ..Default::default()
        };
        let strides: Vec<_> = (1..=7).map(|s| c.stage_stride(s)).collect();
        assert_eq!(strides, vec![4, 8, 16, 32, 32, 32, 32]);
        assert_eq!(c.stage_channels(7), 128);
        let plain7 = NetworkConfig { n_stages: 7, ..Default::default() };
        assert_eq!(plain7.stage_stride(7), 256);
    }

    #[test]
    fn validation() {
        let ok = NetworkConfig::default();
        ok.validate().unwrap();
        let missing_level = NetworkConfig {
            fusion_stages: vec![5],
            ..Default::default()
        };
        assert!(matches!(missing_level.validate(), Err(Error::Config(_))));
        let keep5 = NetworkConfig {
            keep_last3: true,
            ..Default::default()
        };
        assert!(keep5.validate().is_err());
        assert!(NetworkConfig { fpn_last_k: Some(6), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn last_k() {
        let outs = vec![1, 2, 3, 4, 5, 6, 7];
        assert_eq!(last_k_outputs(&outs, 4).unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(last_k_outputs(&outs, 7).unwrap(), outs);
        assert!(last_k_outputs(&outs, 8).is_err());
    }
}
