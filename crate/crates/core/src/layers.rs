//! Parameterized building blocks shared by the encoder, neck and decoder.
//!
//! Layers hold only parameter handles, so one layer value drives both the
//! `f32` and `f64` parameter stores.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::params::{BufferId, BufferStore, Ctx, ParamId, ParamStore};
use crate::tensor::conv::ConvParams;
use crate::tensor::{Real, Tensor, Var};

/// Weight std of the 1×1 prediction heads.
pub const HEAD_STD: f64 = 0.1;

/// Allocates named parameters with deterministic initialization:
/// fan-in-scaled Gaussian conv weights (std = √(2/fan_in)), zero biases,
/// unit/zero norm affine parameters. Prediction heads use [`HEAD_STD`].
pub struct Builder<'a, T: Real> {
    pub params: &'a mut ParamStore<T>,
    pub buffers: &'a mut BufferStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(params: &'a mut ParamStore<T>, buffers: &'a mut BufferStore<T>, seed: u64) -> Self {
        Self {
            params,
            buffers,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Conv> {
        let fan_in = (cin / groups * kernel * kernel) as f64;
        self.conv_with_std(name, cin, cout, kernel, stride, groups, bias, (2.0 / fan_in).sqrt())
    }

    /// 1×1 classifier with bias and small Gaussian weights.
    pub fn head(&mut self, name: &str, cin: usize, cout: usize) -> Result<Conv> {
        self.conv_with_std(name, cin, cout, 1, 1, 1, true, HEAD_STD)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_with_std(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        std: f64,
    ) -> Result<Conv> {
        let cin_g = cin / groups;
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = cout * cin_g * kernel * kernel;
        let data: Vec<T> = (0..n).map(|_| T::lit(normal.sample(&mut self.rng))).collect();
        let weight = self.params.add(
            format!("{name}.weight"),
            Tensor::from_vec(vec![cout, cin_g, kernel, kernel], data)?,
        )?;
        let bias = if bias {
            Some(self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            params: ConvParams::new(stride, kernel / 2, groups),
        })
    }

    pub fn batchnorm(&mut self, name: &str, channels: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: self.params.add(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: self.params.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            stats: self.buffers.add(name, channels),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: bool,
    ) -> Result<ConvBn> {
        Ok(ConvBn {
            conv: self.conv(&format!("{name}.conv"), cin, cout, kernel, stride, groups, false)?,
            bn: self.batchnorm(&format!("{name}.bn"), cout)?,
            act,
        })
    }
}

/// Zero-padded convolution with padding ⌊k/2⌋.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub params: ConvParams,
}

impl Conv {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(x, w, b, self.params)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl BatchNorm {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        ctx.batchnorm(x, self.gamma, self.beta, self.stats)
    }
}

/// conv → BN (→ SiLU).
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub act: bool,
}

impl ConvBn {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(if self.act { ctx.tape.silu(y) } else { y })
    }
}

/// Channel attention: GAP → 1×1 reduce → SiLU → 1×1 expand → sigmoid → scale.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Conv,
    pub expand: Conv,
}

impl SqueezeExcite {
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.tape.global_avg_pool(x)?;
        let s = self.reduce.forward(ctx, s)?;
        let s = ctx.tape.silu(s);
        let s = self.expand.forward(ctx, s)?;
        let s = ctx.tape.sigmoid(s);
        ctx.tape.mul_broadcast(x, s)
    }
}

/// Inverted-residual block.
#[derive(Clone, Debug)]
pub struct MbConv {
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBn,
    pub in_channels: usize,
    pub residual: bool,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Real>(
        b: &mut Builder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        expansion: usize,
        kernel: usize,
        stride: usize,
        se_ratio: f64,
    ) -> Result<Self> {
        let mid = cin * expansion;
        let expand = if expansion != 1 {
            Some(b.conv_bn(&format!("{name}.expand"), cin, mid, 1, 1, 1, true)?)
        } else {
            None
        };
        let depthwise = b.conv_bn(&format!("{name}.dw"), mid, mid, kernel, stride, mid, true)?;
        let squeezed = ((se_ratio * cin as f64).ceil() as usize).max(1);
        let se = Some(SqueezeExcite {
            reduce: b.conv(&format!("{name}.se.reduce"), mid, squeezed, 1, 1, 1, true)?,
            expand: b.conv(&format!("{name}.se.expand"), squeezed, mid, 1, 1, 1, true)?,
        });
        let project = b.conv_bn(&format!("{name}.project"), mid, cout, 1, 1, 1, false)?;
        Ok(Self {
            expand,
            depthwise,
            se,
            project,
            in_channels: cin,
            residual: stride == 1 && cin == cout,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(crate::Error::shape(
                "mbconv",
                format!("block expects {} channels, got {c}", self.in_channels),
            ));
        }
        let mut y = x;
        if let Some(e) = &self.expand {
            y = e.forward(ctx, y)?;
        }
        y = self.depthwise.forward(ctx, y)?;
        if let Some(se) = &self.se {
            y = se.forward(ctx, y)?;
        }
        y = self.project.forward(ctx, y)?;
        if self.residual {
            y = ctx.tape.add(y, x)?;
        }
        Ok(y)
    }
}

/// `SiLU((conv3 → BN → SiLU → conv3 → BN)(x) + skip(x))`, where `skip` is a
/// 1×1 projection when the width changes and the identity otherwise.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub skip: Option<Conv>,
}

impl ResBlock {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            conv1: b.conv_bn(&format!("{name}.conv1"), cin, cout, 3, 1, 1, true)?,
            conv2: b.conv_bn(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false)?,
            skip: if cin != cout {
                Some(b.conv(&format!("{name}.skip"), cin, cout, 1, 1, 1, true)?)
            } else {
                None
            },
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.conv2.forward(ctx, y)?;
        let s = match &self.skip {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        let y = ctx.tape.add(y, s)?;
        Ok(ctx.tape.silu(y))
    }
}
