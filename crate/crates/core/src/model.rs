//! The assembled network: backbone with pyramid-guided fusion points, FPN and
//! detection head.

use crate::backbone::{last_k_outputs, Backbone, Fpn, NetworkConfig};
use crate::detector::{AnchorSet, Head};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::ipg_transform::{IpgTransformLevel, STEM_STRIDE};
use crate::nn::Ctx;
use crate::params::ParamStore;
use crate::pyramid::PyramidSet;
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct FusionPoint {
    pub stage: usize,
    pub transform: IpgTransformLevel,
    pub fusion: Fusion,
}

#[derive(Clone, Debug)]
pub struct IpgNet {
    pub config: NetworkConfig,
    pub backbone: Backbone,
    pub fusion_points: Vec<FusionPoint>,
    pub fpn: Fpn,
    pub head: Head,
}

pub struct NetOutput {
    /// `R_s` or, at fusion stages, `O_s`; one per stage in order.
    pub stages: Vec<Var>,
    pub fpn: Vec<Var>,
    pub head: Vec<(Var, Var)>,
}

impl IpgNet {
    /// Registers every parameter in `store`. With an empty
    /// `fusion_stages` this is the plain backbone network.
    pub fn new(config: &NetworkConfig, store: &mut ParamStore) -> Result<Self> {
        Self::with_ipg_stem_stride(config, store, STEM_STRIDE)
    }

    /// Builds the network with a non-standard stem stride in every pyramid
    /// transform. Only useful for exercising the alignment check.
    pub fn with_ipg_stem_stride(config: &NetworkConfig, store: &mut ParamStore, stem_stride: usize) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(store, config)?;
        let mut stages = config.fusion_stages.clone();
        stages.sort_unstable();
        let mut fusion_points = Vec::with_capacity(stages.len());
        for s in stages {
            let level = s - 1;
            let transform =
                IpgTransformLevel::with_stem_stride(store, &format!("ipg.level{level}"), level, config.c1, stem_stride)?;
            let fusion = Fusion::new(
                store,
                &format!("fusion.stage{s}"),
                config.fusion_variant,
                s,
                config.stage_channels(s),
            )?;
            fusion_points.push(FusionPoint {
                stage: s,
                transform,
                fusion,
            });
        }
        let fpn_ids: Vec<usize> = config.fpn_stages().collect();
        let fpn_in: Vec<usize> = fpn_ids.iter().map(|&s| config.stage_channels(s)).collect();
        let fpn = Fpn::new(store, &fpn_in, &fpn_ids, config.fpn_channels)?;
        let head = Head::new(store, config.fpn_channels, config.n_classes)?;
        Ok(IpgNet {
            config: config.clone(),
            backbone,
            fusion_points,
            fpn,
            head,
        })
    }

    pub fn fusion_point(&self, stage: usize) -> Option<&FusionPoint> {
        self.fusion_points.iter().find(|p| p.stage == stage)
    }

    /// Runs the stem and every stage, fusing pyramid features where
    /// configured. Fused outputs feed the next stage.
    pub fn forward_backbone(&self, ctx: &mut Ctx, pyramid: &PyramidSet) -> Result<Vec<Var>> {
        let image = pyramid
            .level(0)
            .ok_or_else(|| Error::Precondition("empty pyramid".into()))?;
        let (h, w) = image.shape().spatial();
        self.config.check_input(h, w)?;
        let x = ctx.input(image.clone());
        let mut x = self.backbone.forward_stem(ctx, x)?;
        let mut outputs = Vec::with_capacity(self.config.n_stages);
        for s in 1..=self.config.n_stages {
            let r = self.backbone.forward_stage(ctx, s, x)?;
            x = match self.fusion_point(s) {
                Some(point) => self.fuse_at(ctx, point, pyramid, r)?,
                None => r,
            };
            outputs.push(x);
        }
        Ok(outputs)
    }

    /// `O_s = β(f_{s-1}(I_{s-1}), R_s)`.
    pub fn fuse_at(&self, ctx: &mut Ctx, point: &FusionPoint, pyramid: &PyramidSet, r: Var) -> Result<Var> {
        let level = point.stage - 1;
        let img = pyramid.level(level).ok_or_else(|| {
            Error::Config(format!(
                "fusion stage {} needs pyramid level {level}, pyramid has {}",
                point.stage,
                pyramid.len()
            ))
        })?;
        let img = ctx.input(img.clone());
        let f = point.transform.forward(ctx, img)?;
        point.fusion.forward(ctx, f, r)
    }

    /// FPN over the configured stage outputs (all, or the last `k`).
    pub fn forward_fpn(&self, ctx: &mut Ctx, stage_outputs: &[Var]) -> Result<Vec<Var>> {
        if stage_outputs.len() < 2 {
            return Err(Error::Shape("the FPN needs at least two stage outputs".into()));
        }
        let k = self.config.fpn_stages().count();
        let feats = last_k_outputs(stage_outputs, k)?;
        self.fpn.forward(ctx, &feats)
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &PyramidSet) -> Result<NetOutput> {
        let stages = self.forward_backbone(ctx, pyramid)?;
        let fpn = self.forward_fpn(ctx, &stages)?;
        let head = self.head.forward(ctx, &fpn)?;
        Ok(NetOutput { stages, fpn, head })
    }

    /// Spatial dims of each FPN level for an input of `(h, w)`.
    pub fn fpn_level_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        self.config
            .fpn_stages()
            .map(|s| {
                let st = self.config.stage_stride(s);
                (h / st, w / st)
            })
            .collect()
    }

    pub fn anchors(&self, h: usize, w: usize) -> Result<AnchorSet> {
        AnchorSet::new((h, w), &self.fpn_level_dims(h, w))
    }
}
