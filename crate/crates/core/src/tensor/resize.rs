//! Bilinear resize with half-pixel centers.
//!
//! Source coordinate for destination index `d` is `(d + 0.5)·(in/out) − 0.5`,
//! clamped to `[0, in − 1]`.

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

fn taps<T: Real>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: T::lit(1.0 - frac),
                w_hi: T::lit(frac),
            }
        })
        .collect()
}

pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be at least 1×1, got {out_h}×{out_w}"
        )));
    }
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let src = x.data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for (p, dst) in out.chunks_exact_mut(out_h * out_w).enumerate() {
        let plane = &src[p * h * w..][..h * w];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &plane[ry.lo * w..][..w];
            let r1 = &plane[ry.hi * w..][..w];
            for (ox, rx) in tx.iter().enumerate() {
                let top = r0[rx.lo] * rx.w_lo + r0[rx.hi] * rx.w_hi;
                let bot = r1[rx.lo] * rx.w_lo + r1[rx.hi] * rx.w_hi;
                dst[oy * out_w + ox] = top * ry.w_lo + bot * ry.w_hi;
            }
        }
    }
    Tensor::from_vec(vec![n, c, out_h, out_w], out)
}

/// Adjoint of [`bilinear_resize`]: scatters `grad_out` back onto the input grid.
pub fn bilinear_resize_backward<T: Real>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = grad_out.dims4()?;
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let ty = taps::<T>(in_h, out_h);
    let tx = taps::<T>(in_w, out_w);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * c * in_h * in_w];
    for (p, plane) in dx.chunks_exact_mut(in_h * in_w).enumerate() {
        let go = &g[p * out_h * out_w..][..out_h * out_w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let v = go[oy * out_w + ox];
                let (a, b) = (v * ry.w_lo, v * ry.w_hi);
                plane[ry.lo * in_w + rx.lo] = plane[ry.lo * in_w + rx.lo] + a * rx.w_lo;
                plane[ry.lo * in_w + rx.hi] = plane[ry.lo * in_w + rx.hi] + a * rx.w_hi;
                plane[ry.hi * in_w + rx.lo] = plane[ry.hi * in_w + rx.lo] + b * rx.w_lo;
                plane[ry.hi * in_w + rx.hi] = plane[ry.hi * in_w + rx.hi] + b * rx.w_hi;
            }
        }
    }
    Tensor::from_vec(vec![n, c, in_h, in_w], dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent per-pixel interpolator: samples the four neighbours by
    /// explicit clamped index lookups.
    fn reference(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let at = |p: usize, yy: i64, xx: i64| {
            let yy = yy.clamp(0, h as i64 - 1) as usize;
            let xx = xx.clamp(0, w as i64 - 1) as usize;
            x.data()[p * h * w + yy * w + xx]
        };
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0);
                    let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0);
                    let (y0, x0) = (sy.floor() as i64, sx.floor() as i64);
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = at(p, y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + at(p, y0, x0 + 1) * (1.0 - fy) * fx
                        + at(p, y0 + 1, x0) * fy * (1.0 - fx)
                        + at(p, y0 + 1, x0 + 1) * fy * fx;
                    out.data_mut()[(p * oh + oy) * ow + ox] = v;
                }
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, &[1, 2, 3, 5]);
        assert_eq!(bilinear_resize(&x, 3, 5).unwrap(), x);
        let c = Tensor::<f64>::full(&[1, 1, 3, 4], 2.25);
        for (oh, ow) in [(1, 1), (7, 2), (6, 8), (2, 9)] {
            let y = bilinear_resize(&c, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 2.25).abs() < 1e-12));
        }
    }

    #[test]
    fn two_to_four_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, &[1, 1, 2, 2]);
        let got = bilinear_resize(&x, 4, 4).unwrap();
        let want = reference(&x, 4, 4);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn random_shapes_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..25 {
            let shape = [
                rng.random_range(1..3),
                rng.random_range(1..3),
                rng.random_range(1..7),
                rng.random_range(1..7),
            ];
            let x = random(&mut rng, &shape);
            let (oh, ow) = (rng.random_range(1..13), rng.random_range(1..13));
            let got = bilinear_resize(&x, oh, ow).unwrap();
            let want = reference(&x, oh, ow);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <resize(x), g> == <x, resizeᵀ(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[2, 1, 3, 4]);
        let g = random(&mut rng, &[2, 1, 7, 5]);
        let y = bilinear_resize(&x, 7, 5).unwrap();
        let xt = bilinear_resize_backward(&g, 3, 4).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }
}
