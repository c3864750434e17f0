//! Spatial and channel reductions over NCHW tensors.
//!
//! With `keepdim` the reduced axes stay as size-1 extents (`[N,C,1,1]`,
//! `[N,1,H,W]`); otherwise they are dropped (`[N,C]`, `[N,H,W]`).

use super::{Real, Tensor};
use crate::error::Result;

fn spatial_shape(n: usize, c: usize, keepdim: bool) -> Vec<usize> {
    if keepdim {
        vec![n, c, 1, 1]
    } else {
        vec![n, c]
    }
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>, keepdim: bool) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let denom = T::from_usize(hw).unwrap();
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(spatial_shape(n, c, keepdim), out)
}

/// Per-(sample, channel) maximum over H×W. Also returns the flat in-plane
/// index of the winner; ties resolve to the first index in row-major order.
pub fn spatial_max<T: Real>(x: &Tensor<T>, keepdim: bool) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let mut vals = Vec::with_capacity(n * c);
    let mut idx = Vec::with_capacity(n * c);
    for plane in x.data().chunks_exact(h * w) {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        vals.push(plane[best]);
        idx.push(best);
    }
    Ok((Tensor::from_vec(spatial_shape(n, c, keepdim), vals)?, idx))
}

pub fn channel_sum<T: Real>(x: &Tensor<T>, keepdim: bool) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = vec![T::zero(); n * hw];
    for b in 0..n {
        let dst = &mut out[b * hw..][..hw];
        for ch in 0..c {
            for (d, &v) in dst.iter_mut().zip(&x.data()[(b * c + ch) * hw..][..hw]) {
                *d = *d + v;
            }
        }
    }
    let shape = if keepdim { vec![n, 1, h, w] } else { vec![n, h, w] };
    Tensor::from_vec(shape, out)
}
