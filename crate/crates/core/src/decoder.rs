//! Layer-by-layer decoder gated by the normalized channel-wise Euclidean
//! distance between the two temporal feature maps.
//!
//! Stages run coarsest to finest over pyramid levels 5..0. Each stage:
//!
//! ```text
//! X = ResBlock1(concat(F1, F2))          (+ prev, except at the coarsest stage)
//! X = ResBlock2(resize(X, target))
//! G = resize(sigmoid(D / max(d, eps)), target),  D = ‖F1 − F2‖_c,  d = max_xy D
//! out = X ⊙ G
//! ```
//!
//! and a 1×1 head turns `out` into a full-resolution logit map. The target of
//! a stage is the next finer level's size; the finest stage upsamples ×2.

use crate::backbone::FeaturePyramid;
use crate::changefpn::NeckOutput;
use crate::error::{Error, Result};
use crate::layers::{Builder, Conv, ResBlock};
use crate::params::Ctx;
use crate::tensor::{Real, Tape, Var};

pub const DISTANCE_EPS: f64 = 1e-8;

/// `D[n,0,y,x] = sqrt(Σ_c (F1 − F2)²)`.
pub fn channel_euclidean_distance<T: Real>(tape: &mut Tape<T>, f1: Var, f2: Var) -> Result<Var> {
    tape.channel_distance(f1, f2)
}

/// `sigmoid(D / max(d, eps))` with `d` the per-sample spatial maximum of `D`.
pub fn normalize_distance<T: Real>(tape: &mut Tape<T>, d: Var, eps: T) -> Result<Var> {
    if tape.value(d).data().iter().any(|&v| v < T::zero()) {
        return Err(Error::invalid("distance map has negative entries"));
    }
    let peak = tape.spatial_max(d)?;
    let peak = tape.clamp_min(peak, eps);
    let ratio = tape.div_broadcast(d, peak)?;
    Ok(tape.sigmoid(ratio))
}

#[derive(Clone, Debug)]
pub struct DecodeStage {
    pub res1: ResBlock,
    pub res2: ResBlock,
    pub head: Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeStageOutput {
    /// Post-upsample feature that feeds the next stage.
    pub decoded: Var,
    /// Head output at input resolution, `[N,1,S,S]`.
    pub logit: Var,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Coarsest first.
    pub stages: Vec<DecodeStage>,
    /// Distance gate on (`true`) or `G ≡ 1` (`false`).
    pub gated: bool,
    pub in_channels: usize,
    pub channels: usize,
}

impl Decoder {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, in_channels: usize, channels: usize, gated: bool) -> Result<Self> {
        let mut stages = Vec::with_capacity(6);
        for s in 0..6 {
            let name = format!("decoder.stage{}", s + 1);
            stages.push(DecodeStage {
                res1: ResBlock::build(b, &format!("{name}.res1"), in_channels, channels)?,
                res2: ResBlock::build(b, &format!("{name}.res2"), channels, channels)?,
                head: b.head(&format!("{name}.head"), channels, 1)?,
            });
        }
        Ok(Self {
            stages,
            gated,
            in_channels,
            channels,
        })
    }

    /// One stage. `features` is the stage input (already concatenated),
    /// `pair` the two temporal maps the gate is computed from.
    pub fn decode_stage<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        stage: usize,
        features: Var,
        pair: Option<(Var, Var)>,
        prev: Option<Var>,
        target_hw: (usize, usize),
    ) -> Result<Var> {
        let st = &self.stages[stage];
        let (_, _, h, w) = ctx.tape.value(features).dims4()?;
        if target_hw.0 < h || target_hw.1 < w {
            return Err(Error::shape(
                "decode_stage",
                format!("target {target_hw:?} smaller than input {h}×{w}"),
            ));
        }
        let mut x = st.res1.forward(ctx, features)?;
        if let Some(prev) = prev {
            x = ctx.tape.add(x, prev)?;
        }
        x = ctx.tape.resize(x, target_hw.0, target_hw.1)?;
        x = st.res2.forward(ctx, x)?;
        if !self.gated {
            return Ok(x);
        }
        let (f1, f2) =
            pair.ok_or_else(|| Error::invalid("distance-gated decoding needs the two temporal feature maps"))?;
        let d = channel_euclidean_distance(&mut ctx.tape, f1, f2)?;
        let g = normalize_distance(&mut ctx.tape, d, T::lit(DISTANCE_EPS))?;
        let g = ctx.tape.resize(g, target_hw.0, target_hw.1)?;
        ctx.tape.mul_broadcast(x, g)
    }

    /// All six stages; output ordered stage 1..6 (1–5 auxiliary, 6 main).
    pub fn decode_all<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        neck: &NeckOutput,
        input_hw: (usize, usize),
    ) -> Result<Vec<DecodeStageOutput>> {
        let inputs: Vec<(Var, Option<(Var, Var)>)> = match neck {
            NeckOutput::Pair(a, b) => a
                .levels
                .iter()
                .zip(&b.levels)
                .map(|(&fa, &fb)| Ok((ctx.tape.concat_channels(&[fa, fb])?, Some((fa, fb)))))
                .collect::<Result<_>>()?,
            NeckOutput::Fused(p) => {
                if self.gated {
                    return Err(Error::Config(
                        "the distance-gated decoder needs two branch pyramids, not a fused one".into(),
                    ));
                }
                p.levels.iter().map(|&v| (v, None)).collect()
            }
        };
        if inputs.len() != self.stages.len() {
            return Err(Error::shape(
                "decode_all",
                format!("{} levels for {} stages", inputs.len(), self.stages.len()),
            ));
        }
        let sizes: Vec<(usize, usize)> = inputs
            .iter()
            .map(|(v, _)| {
                let (_, _, h, w) = ctx.tape.value(*v).dims4()?;
                Ok((h, w))
            })
            .collect::<Result<_>>()?;

        let mut prev = None;
        let mut outs = Vec::with_capacity(6);
        for (stage, level) in (0..inputs.len()).rev().enumerate() {
            let target = if level > 0 {
                sizes[level - 1]
            } else {
                (sizes[0].0 * 2, sizes[0].1 * 2)
            };
            let (features, pair) = inputs[level];
            let decoded = self.decode_stage(ctx, stage, features, pair, prev, target)?;
            let logit = self.stages[stage].head.forward(ctx, decoded)?;
            let logit = ctx.tape.resize(logit, input_hw.0, input_hw.1)?;
            outs.push(DecodeStageOutput { decoded, logit });
            prev = Some(decoded);
        }
        Ok(outs)
    }

    /// The ungated decoder on a single fused pyramid.
    pub fn baseline_decoder<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        pyramid: &FeaturePyramid,
        input_hw: (usize, usize),
    ) -> Result<Vec<DecodeStageOutput>> {
        let ungated = Decoder {
            gated: false,
            ..self.clone()
        };
        ungated.decode_all(ctx, &NeckOutput::Fused(pyramid.clone()), input_hw)
    }
}
