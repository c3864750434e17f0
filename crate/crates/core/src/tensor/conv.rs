//! 2-D cross-correlation with zero padding, grouped and depthwise.
//!
//! Grouped convolutions lower to im2col + GEMM; the depthwise case (one input
//! and one output channel per group) runs as a direct loop.

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Geometry shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
    p: ConvParams,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.p.stride == 1 && self.p.padding == 0
    }
}

pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

fn geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<Geometry> {
    if p.stride == 0 || p.groups == 0 {
        return Err(Error::invalid(format!(
            "conv2d stride and groups must be positive (stride={}, groups={})",
            p.stride, p.groups
        )));
    }
    let (n, cin, h, w) = input.dims4()?;
    let (cout, cin_g, kh, kw) = weight.dims4().map_err(|_| {
        Error::shape(
            "conv2d",
            format!("weight must be Cout×Cin/g×Kh×Kw, got {:?}", weight.shape()),
        )
    })?;
    if cin % p.groups != 0 || cout % p.groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("channels {cin}->{cout} not divisible by groups {}", p.groups),
        ));
    }
    if cin / p.groups != cin_g {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {cin} channels, weight {:?} expects {} with {} groups",
                weight.shape(),
                cin_g * p.groups,
                p.groups
            ),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} for {cout} output channels", b.shape()),
            ));
        }
    }
    let ho = output_extent(h, kh, p.stride, p.padding);
    let wo = output_extent(w, kw, p.stride, p.padding);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}×{kw} larger than padded input {h}×{w} (+{})", p.padding),
        ));
    };
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
        cin_g,
        cout_g: cout / p.groups,
        p,
    })
}

fn im2col<T: Real>(g: &Geometry, src: &[T], col: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.cin_g {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.p.stride + ky) as isize - g.p.padding as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.p.stride + kx) as isize - g.p.padding as isize;
                        dst[oy * g.wo + ox] = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &Geometry, col: &[T], dst: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.cin_g {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.p.stride + ky) as isize - g.p.padding as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.p.stride + kx) as isize - g.p.padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            let d = &mut plane[iy as usize * g.w + ix as usize];
                            *d = *d + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution: `[N,Cin,H,W] ⋆ [Cout,Cin/g,Kh,Kw] (+ bias) -> [N,Cout,H',W']`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, bias, p)?;
    let hw_in = g.h * g.w;
    let hw_out = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.cout * hw_out];
    let x = input.data();
    let wt = weight.data();

    if g.is_depthwise() {
        for n in 0..g.n {
            for c in 0..g.cout {
                let plane = &x[(n * g.cin + c) * hw_in..][..hw_in];
                let kern = &wt[c * g.kh * g.kw..][..g.kh * g.kw];
                let dst = &mut out[(n * g.cout + c) * hw_out..][..hw_out];
                depthwise_plane(&g, plane, kern, dst);
            }
        }
    } else {
        let k = g.k();
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * hw_out]
        };
        for n in 0..g.n {
            for grp in 0..g.p.groups {
                let src = &x[(n * g.cin + grp * g.cin_g) * hw_in..][..g.cin_g * hw_in];
                let cols: &[T] = if g.is_pointwise() {
                    src
                } else {
                    im2col(&g, src, &mut col);
                    &col
                };
                let w_g = &wt[grp * g.cout_g * k..][..g.cout_g * k];
                let dst = &mut out[(n * g.cout + grp * g.cout_g) * hw_out..][..g.cout_g * hw_out];
                T::gemm(
                    g.cout_g,
                    k,
                    hw_out,
                    T::one(),
                    w_g,
                    (k as isize, 1),
                    cols,
                    (hw_out as isize, 1),
                    T::zero(),
                    dst,
                    (hw_out as isize, 1),
                );
            }
        }
    }

    if let Some(b) = bias {
        for n in 0..g.n {
            for c in 0..g.cout {
                let bv = b.data()[c];
                for v in &mut out[(n * g.cout + c) * hw_out..][..hw_out] {
                    *v = *v + bv;
                }
            }
        }
    }
    Tensor::from_vec(vec![g.n, g.cout, g.ho, g.wo], out)
}

fn depthwise_plane<T: Real>(g: &Geometry, plane: &[T], kern: &[T], dst: &mut [T]) {
    let pad = g.p.padding as isize;
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let mut acc = T::zero();
            for ky in 0..g.kh {
                let iy = (oy * g.p.stride + ky) as isize - pad;
                if iy < 0 || iy as usize >= g.h {
                    continue;
                }
                let row = &plane[iy as usize * g.w..][..g.w];
                for kx in 0..g.kw {
                    let ix = (ox * g.p.stride + kx) as isize - pad;
                    if ix >= 0 && (ix as usize) < g.w {
                        acc = acc + row[ix as usize] * kern[ky * g.kw + kx];
                    }
                }
            }
            dst[oy * g.wo + ox] = acc;
        }
    }
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: ConvParams,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, None, p)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {:?} vs output {:?}", grad_out.shape(), [g.n, g.cout, g.ho, g.wo]),
        ));
    }
    let hw_in = g.h * g.w;
    let hw_out = g.ho * g.wo;
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); weight.numel()];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);

    for n in 0..g.n {
        for c in 0..g.cout {
            let s: T = dy[(n * g.cout + c) * hw_out..][..hw_out].iter().copied().sum();
            db[c] = db[c] + s;
        }
    }

    if g.is_depthwise() {
        let pad = g.p.padding as isize;
        let kk = g.kh * g.kw;
        for n in 0..g.n {
            for c in 0..g.cout {
                let plane = &x[(n * g.cin + c) * hw_in..][..hw_in];
                let gy = &dy[(n * g.cout + c) * hw_out..][..hw_out];
                let kern = &wt[c * kk..][..kk];
                let dkern = &mut dw[c * kk..][..kk];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let go = gy[oy * g.wo + ox];
                        for ky in 0..g.kh {
                            let iy = (oy * g.p.stride + ky) as isize - pad;
                            if iy < 0 || iy as usize >= g.h {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix = (ox * g.p.stride + kx) as isize - pad;
                                if ix < 0 || ix as usize >= g.w {
                                    continue;
                                }
                                let idx = iy as usize * g.w + ix as usize;
                                dkern[ky * g.kw + kx] = dkern[ky * g.kw + kx] + go * plane[idx];
                                if let Some(dx) = dx.as_mut() {
                                    let d = &mut dx[(n * g.cin + c) * hw_in + idx];
                                    *d = *d + go * kern[ky * g.kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        let k = g.k();
        let pointwise = g.is_pointwise();
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k * hw_out]
        };
        let mut dcol = vec![T::zero(); k * hw_out];
        for n in 0..g.n {
            for grp in 0..g.p.groups {
                let in_off = (n * g.cin + grp * g.cin_g) * hw_in;
                let src = &x[in_off..][..g.cin_g * hw_in];
                let cols: &[T] = if pointwise {
                    src
                } else {
                    im2col(&g, src, &mut col);
                    &col
                };
                let gy = &dy[(n * g.cout + grp * g.cout_g) * hw_out..][..g.cout_g * hw_out];
                // dW_g += dY_g · colᵀ
                T::gemm(
                    g.cout_g,
                    hw_out,
                    k,
                    T::one(),
                    gy,
                    (hw_out as isize, 1),
                    cols,
                    (1, hw_out as isize),
                    T::one(),
                    &mut dw[grp * g.cout_g * k..][..g.cout_g * k],
                    (k as isize, 1),
                );
                if let Some(dx) = dx.as_mut() {
                    let w_g = &wt[grp * g.cout_g * k..][..g.cout_g * k];
                    // dcol = W_gᵀ · dY_g
                    T::gemm(
                        k,
                        g.cout_g,
                        hw_out,
                        T::one(),
                        w_g,
                        (1, k as isize),
                        gy,
                        (hw_out as isize, 1),
                        T::zero(),
                        &mut dcol,
                        (hw_out as isize, 1),
                    );
                    let dst = &mut dx[in_off..][..g.cin_g * hw_in];
                    if pointwise {
                        for (d, &s) in dst.iter_mut().zip(&dcol) {
                            *d = *d + s;
                        }
                    } else {
                        col2im_add(&g, &dcol, dst);
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: dx.map(|d| Tensor::from_vec(input.shape().to_vec(), d)).transpose()?,
        weight: Tensor::from_vec(weight.shape().to_vec(), dw)?,
        bias: Tensor::from_vec(vec![g.cout], db)?,
    })
}
