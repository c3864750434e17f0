//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and what its backward
//! rule needs. [`Tape::backward`] walks the tape in reverse from a scalar loss
//! and returns gradients for every leaf that requires them.

use std::sync::Arc;

use super::conv::{self, ConvParams};
use super::norm::{self, BatchNormMode, BatchNormSaved, RunningStats};
use super::{reduce, resize, same_shape, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        p: ConvParams,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved<T>,
    },
    Silu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulBroadcast(Var, Var),
    DivBroadcast(Var, Var),
    ClampMin(Var, T),
    Scale(Var, T),
    DivScalar(Var, T),
    Concat(Vec<Var>),
    ConcatBatch(Vec<Var>),
    SliceBatch(Var, usize),
    GlobalAvgPool(Var),
    SpatialMax(Var, Vec<usize>),
    ChannelSum(Var),
    Resize(Var),
    ChannelDistance(Var, Var),
    Bce {
        logits: Var,
        labels: Tensor<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Maps each flat index of `big` to the flat index of `small` under
/// size-1 broadcasting.
fn broadcast_map(op: &'static str, big: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if big.len() != small.len() || big.iter().zip(small).any(|(&b, &s)| s != b && s != 1) {
        return Err(Error::shape(op, format!("cannot broadcast {small:?} onto {big:?}")));
    }
    let rank = big.len();
    let mut small_strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        small_strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let numel: usize = big.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += small_strides[d];
            if idx[d] < big[d] {
                break;
            }
            off -= small_strides[d] * big[d];
            idx[d] = 0;
        }
    }
    Ok(map)
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same shape")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf sharing storage with the caller (parameters are not copied).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), p)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(y, Op::Conv { x, w, b, p }, rg))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: BatchNormMode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let (y, saved) = norm::batchnorm2d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
            momentum,
            eps,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, saved }, rg))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(y, Op::Silu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let y = zip_map(self.value(a), self.value(b), f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a ⊙ b` where `b` broadcasts over its size-1 axes (e.g. `[N,1,H,W]`
    /// spatial gates or `[N,C,1,1]` channel scales).
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_map("mul_broadcast", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(&map).map(|(&x, &j)| x * bv.data()[j]).collect();
        let y = Tensor::from_vec(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::MulBroadcast(a, b), rg))
    }

    pub fn div_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_map("div_broadcast", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(&map).map(|(&x, &j)| x / bv.data()[j]).collect();
        let y = Tensor::from_vec(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::DivBroadcast(a, b), rg))
    }

    pub fn clamp_min(&mut self, x: Var, min: T) -> Var {
        let y = self.value(x).map(|v| v.max(min));
        let rg = self.rg(&[x]);
        self.push(y, Op::ClampMin(x, min), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale(x, c), rg)
    }

    pub fn div_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        if c == T::zero() {
            return Err(Error::invalid("division by zero scalar"));
        }
        let y = self.value(x).map(|v| v / c);
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::DivScalar(x, c), rg))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total_c = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(v), self.shape(first)),
                ));
            }
            total_c += vc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total_c * hw);
        for b in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * hw..][..c * hw]);
            }
        }
        let y = Tensor::from_vec(vec![n, total_c, h, w], data)?;
        let rg = self.rg(xs);
        Ok(self.push(y, Op::Concat(xs.to_vec()), rg))
    }

    /// Stacks tensors of equal per-sample shape along the batch axis.
    pub fn concat_batch(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut n = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape().len() != tail.len() + 1 || t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{:?} vs {:?}", t.shape(), self.shape(first)),
                ));
            }
            n += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![n];
        shape.extend(tail);
        let y = Tensor::from_vec(shape, data)?;
        let rg = self.rg(xs);
        Ok(self.push(y, Op::ConcatBatch(xs.to_vec()), rg))
    }

    /// Samples `start..start + len` of the batch axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_batch",
                format!("range {start}..{} of batch {n}", start + len),
            ));
        }
        let per = t.numel() / n;
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let y = Tensor::from_vec(shape, t.data()[start * per..(start + len) * per].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::SliceBatch(x, start), rg))
    }

    /// `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = reduce::global_avg_pool(self.value(x), true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::GlobalAvgPool(x), rg))
    }

    /// `[N,C,H,W] -> [N,C,1,1]`; the gradient routes to the first argmax.
    pub fn spatial_max(&mut self, x: Var) -> Result<Var> {
        let (y, idx) = reduce::spatial_max(self.value(x), true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::SpatialMax(x, idx), rg))
    }

    /// `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let y = reduce::channel_sum(self.value(x), true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::ChannelSum(x), rg))
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = resize::bilinear_resize(self.value(x), out_h, out_w)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Resize(x), rg))
    }

    /// `sqrt(Σ_c (a − b)²)` per pixel, `[N,C,H,W] × 2 -> [N,1,H,W]`. The
    /// gradient is defined as zero where the distance is exactly zero.
    pub fn channel_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("channel_distance", self.shape(a), self.shape(b))?;
        let (n, c, h, w) = self.value(a).dims4()?;
        let hw = h * w;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * hw];
        for bi in 0..n {
            let dst = &mut out[bi * hw..][..hw];
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for (i, d) in dst.iter_mut().enumerate() {
                    let diff = ad[off + i] - bd[off + i];
                    *d = *d + diff * diff;
                }
            }
            for d in dst.iter_mut() {
                *d = d.sqrt();
            }
        }
        let y = Tensor::from_vec(vec![n, 1, h, w], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::ChannelDistance(a, b), rg))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `{0,1}` labels,
    /// with the probability clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Tensor<T>) -> Result<Var> {
        same_shape("bce_loss", self.shape(logits), labels.shape())?;
        if labels.data().iter().any(|&y| y != T::zero() && y != T::one()) {
            return Err(Error::invalid("bce labels must be 0 or 1"));
        }
        let (lo, hi) = (T::lit(1e-7), T::one() - T::lit(1e-7));
        let z = self.value(logits).data();
        let total: T = z
            .iter()
            .zip(labels.data())
            .map(|(&z, &y)| {
                // comparisons rather than max/min so a NaN logit stays NaN
                let p = sigmoid(z);
                let p = if p < lo {
                    lo
                } else if p > hi {
                    hi
                } else {
                    p
                };
                -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
            })
            .sum();
        let loss = total / T::from_usize(z.len()).unwrap();
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { logits, labels }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(Error::Numerical("backward from a non-finite loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, p } => {
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), &g, *p, self.requires_grad(*x))?;
                if let Some(dx) = cg.input {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, cg.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, cg.bias);
                }
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (dx, dg, db) = norm::batchnorm2d_backward(&g, self.value(*gamma), saved)?;
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::Silu(x) => {
                let dx = zip_map(self.value(*x), &g, |v, gv| {
                    let s = sigmoid(v);
                    gv * (s + v * s * (T::one() - s))
                });
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = zip_map(&node.value, &g, |s, gv| gv * s * (T::one() - s));
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, g.map(|v| -v));
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let da = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                let db = zip_map(&g, self.value(*a), |gv, av| gv * av);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MulBroadcast(a, b) | Op::DivBroadcast(a, b) => {
                let is_div = matches!(node.op, Op::DivBroadcast(..));
                let (av, bv) = (self.value(*a), self.value(*b));
                let map = broadcast_map("broadcast_backward", av.shape(), bv.shape())?;
                let mut da = vec![T::zero(); av.numel()];
                let mut db = vec![T::zero(); bv.numel()];
                for (i, &j) in map.iter().enumerate() {
                    let (x, y, gv) = (av.data()[i], bv.data()[j], g.data()[i]);
                    if is_div {
                        da[i] = gv / y;
                        db[j] = db[j] - gv * x / (y * y);
                    } else {
                        da[i] = gv * y;
                        db[j] = db[j] + gv * x;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(av.shape().to_vec(), da)?);
                self.accumulate(grads, *b, Tensor::from_vec(bv.shape().to_vec(), db)?);
            }
            Op::ClampMin(x, min) => {
                let dx = zip_map(self.value(*x), &g, |v, gv| if v >= *min { gv } else { T::zero() });
                self.accumulate(grads, *x, dx);
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::DivScalar(x, c) => self.accumulate(grads, *x, g.map(|v| v / *c)),
            Op::ConcatBatch(xs) => {
                let mut off = 0;
                for &v in xs {
                    let len = self.value(v).numel();
                    let part = Tensor::from_vec(self.shape(v).to_vec(), g.data()[off..off + len].to_vec())?;
                    off += len;
                    self.accumulate(grads, v, part);
                }
            }
            Op::SliceBatch(x, start) => {
                let xv = self.value(*x);
                let per = xv.numel() / xv.shape()[0];
                let mut dx = vec![T::zero(); xv.numel()];
                dx[start * per..start * per + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape().to_vec(), dx)?);
            }
            Op::Concat(xs) => {
                let (n, total_c, h, w) = g.dims4()?;
                let hw = h * w;
                let mut c_off = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.requires_grad(v) {
                        let mut part = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            part.extend_from_slice(&g.data()[(b * total_c + c_off) * hw..][..c * hw]);
                        }
                        self.accumulate(grads, v, Tensor::from_vec(vec![n, c, h, w], part)?);
                    }
                    c_off += c;
                }
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let denom = T::from_usize(hw).unwrap();
                let mut dx = Vec::with_capacity(n * c * hw);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / denom, hw));
                }
                self.accumulate(grads, *x, Tensor::from_vec(vec![n, c, h, w], dx)?);
            }
            Op::SpatialMax(x, idx) => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4()?;
                let mut dx = Tensor::zeros(xv.shape());
                for (p, (&i, &gv)) in idx.iter().zip(g.data()).enumerate() {
                    dx.data_mut()[p * h * w + i] = gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelSum(x) => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let hw = h * w;
                let mut dx = Vec::with_capacity(n * c * hw);
                for b in 0..n {
                    for _ in 0..c {
                        dx.extend_from_slice(&g.data()[b * hw..][..hw]);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(vec![n, c, h, w], dx)?);
            }
            Op::Resize(x) => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let dx = resize::bilinear_resize_backward(&g, h, w)?;
                self.accumulate(grads, *x, dx);
            }
            Op::ChannelDistance(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, c, h, w) = av.dims4()?;
                let hw = h * w;
                let dist = node.value.data();
                let mut da = vec![T::zero(); av.numel()];
                for bi in 0..n {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for i in 0..hw {
                            let d = dist[bi * hw + i];
                            if d > T::zero() {
                                da[off + i] = g.data()[bi * hw + i] * (av.data()[off + i] - bv.data()[off + i]) / d;
                            }
                        }
                    }
                }
                let db: Vec<T> = da.iter().map(|&v| -v).collect();
                self.accumulate(grads, *a, Tensor::from_vec(av.shape().to_vec(), da)?);
                self.accumulate(grads, *b, Tensor::from_vec(bv.shape().to_vec(), db)?);
            }
            Op::Bce { logits, labels } => {
                let (lo, hi) = (T::lit(1e-7), T::one() - T::lit(1e-7));
                let zv = self.value(*logits);
                let scale = g.data()[0] / T::from_usize(zv.numel()).unwrap();
                let dz = zip_map(zv, labels, |z, y| {
                    let p = sigmoid(z);
                    if p < lo || p > hi {
                        T::zero()
                    } else {
                        (p - y) * scale
                    }
                });
                self.accumulate(grads, *logits, dz);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f32>::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn pointwise_values() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_vec(vec![2], vec![0.0, 1.0]).unwrap(), false);
        let s = t.sigmoid(x);
        let y = t.silu(x);
        assert_eq!(t.value(s).data()[0], 0.5);
        assert_eq!(t.value(y).data()[0], 0.0);
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((t.value(y).data()[1] - want).abs() < 1e-6);
        assert!((want - 0.731_058).abs() < 1e-6);
    }

    #[test]
    fn binary_shape_mismatch_rejected() {
        let mut t = Tape::<f32>::new();
        let a = t.leaf(Tensor::zeros(&[1, 2, 2, 2]), false);
        let b = t.leaf(Tensor::zeros(&[1, 3, 2, 2]), false);
        assert!(t.add(a, b).is_err());
        assert!(t.mul(a, b).is_err());
        let c = t.leaf(Tensor::zeros(&[1, 1, 3, 2]), false);
        assert!(t.concat_channels(&[a, c]).is_err());
        assert!(t.mul_broadcast(a, b).is_err());
    }

    #[test]
    fn broadcast_map_layout() {
        let m = broadcast_map("t", &[2, 3, 2], &[2, 1, 2]).unwrap();
        assert_eq!(m, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
        let m = broadcast_map("t", &[1, 2, 1, 2], &[1, 2, 1, 1]).unwrap();
        assert_eq!(m, vec![0, 0, 1, 1]);
    }
}
