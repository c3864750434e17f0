//! Per-channel batch normalization over (N, H, W).

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Running mean/variance buffers of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Values the backward pass needs.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: BatchNormMode,
}

fn check<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    eps: T,
) -> Result<(usize, usize, usize)> {
    if eps.is_nan() || eps <= T::zero() {
        return Err(Error::invalid(format!("batchnorm eps must be positive, got {eps}")));
    }
    let (n, c, h, w) = x.dims4()?;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", &running.mean),
        ("running_var", &running.var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("{name} has shape {:?}, input has {c} channels", t.shape()),
            ));
        }
    }
    Ok((n, c, h * w))
}

/// Forward batch normalization. In train mode the running statistics are
/// updated in place with `stat ← (1−momentum)·stat + momentum·batch_stat`
/// (the running variance uses the unbiased estimator).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: BatchNormMode,
    momentum: T,
    eps: T,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let (n, c, hw) = check(x, gamma, beta, running, eps)?;
    let count = n * hw;
    if mode == BatchNormMode::Train && count < 2 {
        return Err(Error::invalid(format!(
            "batchnorm in train mode needs at least 2 values per channel, got {count}"
        )));
    }
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        BatchNormMode::Train => {
            let m = T::from_usize(count).unwrap();
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + xd[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let mu = s / m;
                let mut q = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * hw..][..hw] {
                        q = q + (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = q / m;
            }
            if mean.iter().chain(&var).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("batchnorm produced NaN statistics".into()));
            }
            let unbias = m / (m - T::one());
            let rm = running.mean.data_mut();
            for ch in 0..c {
                rm[ch] = (T::one() - momentum) * rm[ch] + momentum * mean[ch];
            }
            let rv = running.var.data_mut();
            for ch in 0..c {
                rv[ch] = (T::one() - momentum) * rv[ch] + momentum * var[ch] * unbias;
            }
        }
        BatchNormMode::Eval => {
            mean.copy_from_slice(running.mean.data());
            var.copy_from_slice(running.var.data());
            if mean.iter().chain(&var).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("batchnorm running statistics are NaN".into()));
            }
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::from_vec(shape.clone(), y)?,
        BatchNormSaved {
            xhat: Tensor::from_vec(shape, xhat)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BatchNormSaved<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let dy = grad_out.data();
    let xh = saved.xhat.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] = dbeta[ch] + dy[i];
                dgamma[ch] = dgamma[ch] + dy[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    let m = T::from_usize(n * hw).unwrap();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gamma.data()[ch] * saved.inv_std[ch];
            for i in off..off + hw {
                dx[i] = match saved.mode {
                    BatchNormMode::Eval => dy[i] * scale,
                    BatchNormMode::Train => scale * (dy[i] - dbeta[ch] / m - xh[i] * dgamma[ch] / m),
                };
            }
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape().to_vec(), dx)?,
        Tensor::from_vec(vec![c], dgamma)?,
        Tensor::from_vec(vec![c], dbeta)?,
    ))
}
