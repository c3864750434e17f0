//! Bi-temporal layer exchange around a shared FPN, and the concatenation
//! baseline neck.
//!
//! The exchange is a pure permutation of level handles: no values are
//! copied or computed, and it adds no parameters.

use crate::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::layers::{Builder, Conv};
use crate::params::Ctx;
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    A,
    B,
}

/// Which branch each level of the first mixed pyramid is taken from. The
/// second mixed pyramid always takes the complement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangePattern {
    selector: Vec<Branch>,
}

impl Default for ExchangePattern {
    /// A at even levels (0 = finest), B at odd levels.
    fn default() -> Self {
        Self::from_fn(|i| if i % 2 == 0 { Branch::A } else { Branch::B })
    }
}

impl ExchangePattern {
    pub fn from_fn(f: impl Fn(usize) -> Branch) -> Self {
        Self {
            selector: (0..6).map(f).collect(),
        }
    }

    pub fn select(&self, level: usize) -> Branch {
        self.selector[level]
    }
}

fn check_pair<T: Real>(tape: &Tape<T>, fa: &FeaturePyramid, fb: &FeaturePyramid) -> Result<()> {
    if fa.levels.len() != fb.levels.len() {
        return Err(Error::shape(
            "layer_exchange",
            format!("{} vs {} levels", fa.levels.len(), fb.levels.len()),
        ));
    }
    for (i, (&a, &b)) in fa.levels.iter().zip(&fb.levels).enumerate() {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::shape(
                "layer_exchange",
                format!("level {i}: {:?} vs {:?}", tape.shape(a), tape.shape(b)),
            ));
        }
    }
    Ok(())
}

/// `(Fab, Fba)`: `Fab[i]` comes from the branch the selector names, `Fba[i]`
/// from the other.
pub fn layer_exchange<T: Real>(
    tape: &Tape<T>,
    fa: &FeaturePyramid,
    fb: &FeaturePyramid,
    pattern: &ExchangePattern,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    check_pair(tape, fa, fb)?;
    let mut ab = Vec::with_capacity(6);
    let mut ba = Vec::with_capacity(6);
    for (i, (&a, &b)) in fa.levels.iter().zip(&fb.levels).enumerate() {
        match pattern.select(i) {
            Branch::A => {
                ab.push(a);
                ba.push(b);
            }
            Branch::B => {
                ab.push(b);
                ba.push(a);
            }
        }
    }
    Ok((FeaturePyramid { levels: ab }, FeaturePyramid { levels: ba }))
}

/// Sends every fused level back to the branch it originated from.
pub fn restore_exchange<T: Real>(
    tape: &Tape<T>,
    fab: &FeaturePyramid,
    fba: &FeaturePyramid,
    pattern: &ExchangePattern,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    layer_exchange(tape, fab, fba, pattern)
}

/// Lateral 1×1 projections to a common width, coarse-to-fine accumulation,
/// and a 3×3 smoothing conv per level.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub lateral: Vec<Conv>,
    pub smooth: Vec<Conv>,
    pub channels: usize,
}

impl Fpn {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, in_channels: &[usize], channels: usize) -> Result<Self> {
        let mut lateral = Vec::new();
        let mut smooth = Vec::new();
        for (i, &c) in in_channels.iter().enumerate() {
            lateral.push(b.conv(&format!("{name}.lateral{i}"), c, channels, 1, 1, 1, true)?);
            smooth.push(b.conv(&format!("{name}.smooth{i}"), channels, channels, 3, 1, 1, true)?);
        }
        Ok(Self {
            lateral,
            smooth,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, p: &FeaturePyramid) -> Result<FeaturePyramid> {
        if p.levels.len() != self.lateral.len() {
            return Err(Error::shape(
                "fpn_fuse",
                format!("expected {} levels, got {}", self.lateral.len(), p.levels.len()),
            ));
        }
        let n = p.levels.len();
        let mut top_down: Vec<Option<Var>> = vec![None; n];
        for i in (0..n).rev() {
            let lat = self.lateral[i].forward(ctx, p.levels[i])?;
            let t = match top_down.get(i + 1).copied().flatten() {
                None => lat,
                Some(coarser) => {
                    let (_, _, h, w) = ctx.tape.value(lat).dims4()?;
                    let up = ctx.tape.resize(coarser, h, w)?;
                    ctx.tape.add(lat, up)?
                }
            };
            top_down[i] = Some(t);
        }
        let mut out = Vec::with_capacity(n);
        for (i, t) in top_down.into_iter().enumerate() {
            out.push(self.smooth[i].forward(ctx, t.expect("filled above"))?);
        }
        Ok(FeaturePyramid { levels: out })
    }
}

/// Neck wiring for one ablation setting.
#[derive(Clone, Debug)]
pub enum Neck {
    /// Exchange → shared FPN on both mixed pyramids → restore. With
    /// `exchange = false` the shared FPN runs on each branch directly.
    Siamese { fpn: Fpn, exchange: bool },
    /// Per-level concatenation of both branches, then one FPN.
    Concat { fpn: Fpn },
}

/// Output of the neck: two branch pyramids, or one fused pyramid.
#[derive(Clone, Debug)]
pub enum NeckOutput {
    Pair(FeaturePyramid, FeaturePyramid),
    Fused(FeaturePyramid),
}

impl Neck {
    pub fn fpn(&self) -> &Fpn {
        match self {
            Neck::Siamese { fpn, .. } | Neck::Concat { fpn } => fpn,
        }
    }

    pub fn forward<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        fa: &FeaturePyramid,
        fb: &FeaturePyramid,
    ) -> Result<NeckOutput> {
        match self {
            Neck::Siamese { fpn, exchange } => {
                let (a, b) = changefpn_forward(ctx, fpn, fa, fb, *exchange)?;
                Ok(NeckOutput::Pair(a, b))
            }
            Neck::Concat { fpn } => Ok(NeckOutput::Fused(baseline_neck(ctx, fpn, fa, fb)?)),
        }
    }
}

pub fn changefpn_forward<T: Real>(
    ctx: &mut Ctx<'_, T>,
    fpn: &Fpn,
    fa: &FeaturePyramid,
    fb: &FeaturePyramid,
    exchange: bool,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    check_pair(&ctx.tape, fa, fb)?;
    if !exchange {
        let a = fpn.forward(ctx, fa)?;
        let b = fpn.forward(ctx, fb)?;
        return Ok((a, b));
    }
    let pattern = ExchangePattern::default();
    let (ab, ba) = layer_exchange(&ctx.tape, fa, fb, &pattern)?;
    let ab = fpn.forward(ctx, &ab)?;
    let ba = fpn.forward(ctx, &ba)?;
    restore_exchange(&ctx.tape, &ab, &ba, &pattern)
}

pub fn baseline_neck<T: Real>(
    ctx: &mut Ctx<'_, T>,
    fpn: &Fpn,
    fa: &FeaturePyramid,
    fb: &FeaturePyramid,
) -> Result<FeaturePyramid> {
    check_pair(&ctx.tape, fa, fb)?;
    let mut levels = Vec::with_capacity(6);
    for (&a, &b) in fa.levels.iter().zip(&fb.levels) {
        levels.push(ctx.tape.concat_channels(&[a, b])?);
    }
    fpn.forward(ctx, &FeaturePyramid { levels })
}
