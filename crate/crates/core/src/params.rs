//! Named parameter and running-statistics storage, and the forward context
//! that binds them onto a [`Tape`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Real, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone)]
struct ParamEntry<T> {
    name: String,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

/// Trainable parameters keyed by canonical dotted path, in creation order.
#[derive(Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value: Arc::new(value),
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.entries[id.0].grad.as_ref()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Adds `grads` into the stored gradients (repeated backward passes sum).
    pub fn accumulate(&mut self, grads: ParamGrads<T>) {
        for (id, g) in grads.0 {
            match &mut self.entries[id.0].grad {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    #[doc(hidden)]
    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.entries[id.0].grad.as_mut()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: Arc::new(e.value.cast()),
                    grad: None,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Running statistics of every normalization layer.
#[derive(Clone, Default)]
pub struct BufferStore<T> {
    entries: Vec<(String, RunningStats<T>)>,
}

impl<T: Real> BufferStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> BufferId {
        self.entries.push((name.into(), RunningStats::new(channels)));
        BufferId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.entries.iter_mut().map(|(n, s)| (n.as_str(), s))
    }

    pub fn get(&self, id: BufferId) -> &RunningStats<T> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: BufferId) -> &mut RunningStats<T> {
        &mut self.entries[id.0].1
    }

    pub fn cast<U: Real>(&self) -> BufferStore<U> {
        BufferStore {
            entries: self
                .entries
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        RunningStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients from one backward pass.
pub struct ParamGrads<T>(pub Vec<(ParamId, Tensor<T>)>);

/// Forward-pass context: a fresh tape plus read access to parameters and
/// write access to running statistics.
pub struct Ctx<'a, T: Real> {
    pub tape: Tape<T>,
    params: &'a ParamStore<T>,
    buffers: &'a mut BufferStore<T>,
    bound: Vec<Option<Var>>,
    pub mode: BatchNormMode,
    pub bn_momentum: T,
    pub bn_eps: T,
    track_params: bool,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(params: &'a ParamStore<T>, buffers: &'a mut BufferStore<T>, mode: BatchNormMode) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            buffers,
            mode,
            bn_momentum: T::lit(0.1),
            bn_eps: T::lit(1e-5),
            track_params: true,
        }
    }

    /// Parameters enter the tape as constants; backward only reaches inputs.
    pub fn frozen(mut self) -> Self {
        self.track_params = false;
        self
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf_shared(self.params.shared(id), self.track_params);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn batchnorm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: BufferId) -> Result<Var> {
        let g = self.param(gamma);
        let b = self.param(beta);
        let running = self.buffers.get_mut(stats);
        self.tape
            .batchnorm2d(x, g, b, running, self.mode, self.bn_momentum, self.bn_eps)
    }

    /// Gradients of every bound parameter.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = Vec::new();
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(g) = v.and_then(|v| grads.take(v)) {
                out.push((ParamId(i), g));
            }
        }
        Ok(ParamGrads(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::<f32>::new();
        p.add("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(p.add("a.weight", Tensor::zeros(&[2])).is_err());
        assert_eq!(p.count(), 2);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut p = ParamStore::<f64>::new();
        let w = p.add("w", Tensor::from_vec(vec![2], vec![1.0, 3.0]).unwrap()).unwrap();
        let mut b = BufferStore::new();
        for _ in 0..2 {
            let mut ctx = Ctx::new(&p, &mut b, BatchNormMode::Train);
            let x = ctx.param(w);
            let sq = ctx.tape.mul(x, x).unwrap();
            let s = ctx.tape.sum(sq);
            let g = ctx.backward(s).unwrap();
            p.accumulate(g);
        }
        assert_eq!(p.grad(w).unwrap().data(), &[4.0, 12.0]);
        p.zero_grad();
        assert!(p.grad(w).is_none());
    }
}
