//! The full change-detection network and its ablation wiring.

use crate::backbone::Backbone;
use crate::changefpn::{Fpn, Neck};
use crate::config::ModelConfig;
use crate::decoder::{DecodeStageOutput, Decoder};
use crate::error::{Error, Result};
use crate::layers::Builder;
use crate::params::{BufferStore, Ctx, ParamStore};
use crate::tensor::{BatchNormMode, Real, Tensor, Var};

/// Network structure (parameter handles only).
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub neck: Neck,
    pub decoder: Decoder,
}

/// A model together with its parameters and running statistics.
#[derive(Clone)]
pub struct Network<T: Real> {
    pub model: Model,
    pub params: ParamStore<T>,
    pub buffers: BufferStore<T>,
}

impl Model {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::build(b, config)?;
        let pyr = config.pyramid_channels();
        let c = config.neck_channels;
        let neck = if config.use_changefpn || config.use_distance_decoder {
            Neck::Siamese {
                fpn: Fpn::build(b, "neck.fpn", &pyr, c)?,
                exchange: config.use_changefpn,
            }
        } else {
            let doubled: Vec<usize> = pyr.iter().map(|&ch| 2 * ch).collect();
            Neck::Concat {
                fpn: Fpn::build(b, "neck.fpn", &doubled, c)?,
            }
        };
        let decoder_in = match neck {
            Neck::Siamese { .. } => 2 * c,
            Neck::Concat { .. } => c,
        };
        let decoder = Decoder::build(b, decoder_in, config.decoder_channels, config.use_distance_decoder)?;
        Ok(Self {
            config: config.clone(),
            backbone,
            neck,
            decoder,
        })
    }

    /// Six logit maps, stage 1..6; the last is the main prediction.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, img_a: Var, img_b: Var) -> Result<Vec<DecodeStageOutput>> {
        let (_, _, h, w) = ctx.tape.value(img_a).dims4()?;
        let (fa, fb) = self.backbone.siamese_forward(ctx, img_a, img_b)?;
        let neck = self.neck.forward(ctx, &fa, &fb)?;
        self.decoder.decode_all(ctx, &neck, (h, w))
    }
}

impl<T: Real> Network<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let model = {
            let mut b = Builder::new(&mut params, &mut buffers, seed);
            Model::build(&mut b, config)?
        };
        Ok(Self { model, params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Eval-mode main-head logits `[N,1,H,W]` for a pair of `[N,3,H,W]` images.
    pub fn predict(&mut self, img_a: &Tensor<T>, img_b: &Tensor<T>) -> Result<Tensor<T>> {
        if img_a.shape() != img_b.shape() {
            return Err(Error::Extent(format!(
                "temporal images differ: {:?} vs {:?}",
                img_a.shape(),
                img_b.shape()
            )));
        }
        let mut ctx = Ctx::new(&self.params, &mut self.buffers, BatchNormMode::Eval).frozen();
        let a = ctx.tape.constant(img_a.clone());
        let b = ctx.tape.constant(img_b.clone());
        let outs = self.model.forward(&mut ctx, a, b)?;
        let main = outs.last().expect("six stages").logit;
        Ok(ctx.tape.value(main).clone())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            model: self.model.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }
}
