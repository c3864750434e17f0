//! EfficientNet-style encoder shared by both temporal branches.

use crate::config::{ModelConfig, PYRAMID_STAGES};
use crate::error::{Error, Result};
use crate::layers::{Builder, ConvBn, MbConv};
use crate::params::Ctx;
use crate::tensor::{Real, Var};

/// Six feature maps, finest first, at strides {4, 8, 16, 16, 32, 32}.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Var>) -> Result<Self> {
        if levels.len() != 6 {
            return Err(Error::shape(
                "feature_pyramid",
                format!("expected 6 levels, got {}", levels.len()),
            ));
        }
        Ok(Self { levels })
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: ConvBn,
    /// Stages 2–8, one block list per stage.
    pub stages: Vec<Vec<MbConv>>,
}

impl Backbone {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = b.conv_bn("encoder.stem", 3, cfg.stem_channels, 3, 2, 1, true)?;
        let mut cin = cfg.stem_channels;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (si, spec) in cfg.stages.iter().enumerate() {
            let mut blocks = Vec::with_capacity(spec.layers);
            for li in 0..spec.layers {
                let stride = if li == 0 { spec.stride } else { 1 };
                blocks.push(MbConv::build(
                    b,
                    &format!("encoder.stage{}.{li}", si + 2),
                    cin,
                    spec.out_channels,
                    spec.expansion,
                    spec.kernel,
                    stride,
                    cfg.se_ratio,
                )?);
                cin = spec.out_channels;
            }
            stages.push(blocks);
        }
        Ok(Self { stem, stages })
    }

    /// Outputs of all eight stages (stem first).
    pub fn stage_outputs<T: Real>(&self, ctx: &mut Ctx<'_, T>, img: Var) -> Result<Vec<Var>> {
        let (_, c, h, w) = ctx.tape.value(img).dims4()?;
        if c != 3 {
            return Err(Error::shape("backbone", format!("expected 3 input channels, got {c}")));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "backbone",
                format!("input {h}×{w} is not divisible by 32; mirror-pad the image first"),
            ));
        }
        let mut x = self.stem.forward(ctx, img)?;
        let mut outs = vec![x];
        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, x)?;
            }
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn extract_pyramid<T: Real>(&self, ctx: &mut Ctx<'_, T>, img: Var) -> Result<FeaturePyramid> {
        let outs = self.stage_outputs(ctx, img)?;
        FeaturePyramid::new(PYRAMID_STAGES.iter().map(|&s| outs[s - 1]).collect())
    }

    /// Both temporal images through the same encoder parameters, stacked
    /// into one `2N` batch so normalization statistics are shared.
    pub fn siamese_forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        img_a: Var,
        img_b: Var,
    ) -> Result<(FeaturePyramid, FeaturePyramid)> {
        if ctx.tape.shape(img_a) != ctx.tape.shape(img_b) {
            return Err(Error::shape(
                "siamese_forward",
                format!("{:?} vs {:?}", ctx.tape.shape(img_a), ctx.tape.shape(img_b)),
            ));
        }
        let n = ctx.tape.shape(img_a)[0];
        let both = ctx.tape.concat_batch(&[img_a, img_b])?;
        let joint = self.extract_pyramid(ctx, both)?;
        let mut fa = Vec::with_capacity(6);
        let mut fb = Vec::with_capacity(6);
        for &level in &joint.levels {
            fa.push(ctx.tape.slice_batch(level, 0, n)?);
            fb.push(ctx.tape.slice_batch(level, n, n)?);
        }
        Ok((FeaturePyramid::new(fa)?, FeaturePyramid::new(fb)?))
    }
}
