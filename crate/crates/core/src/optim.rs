//! AdamW with decoupled weight decay.
//!
//! ```text
//! m ← β1·m + (1−β1)·g
//! v ← β2·v + (1−β2)·g²
//! p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p      m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid(format!(
                "adamw betas must lie in (0,1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        let non_negative = |v: f64| v >= 0.0;
        if self.eps.is_nan() || self.eps <= 0.0 || !non_negative(self.lr) || !non_negative(self.weight_decay) {
            return Err(Error::invalid("adamw requires eps > 0, lr ≥ 0, weight_decay ≥ 0"));
        }
        Ok(())
    }
}

/// Moments for every parameter of one [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || params.ids().map(|id| Tensor::zeros(params.value(id).shape())).collect();
        Ok(Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        })
    }

    /// One AdamW update over every parameter; all gradients must be populated.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.first_moment.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match parameter store"));
        }
        if let Some(id) = params.ids().find(|&id| params.grad(id).is_none()) {
            return Err(Error::MissingGradient(params.name(id).to_string()));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, wd, eps) = (T::lit(c.lr), T::lit(c.weight_decay), T::lit(c.eps));
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = params.grad(id).expect("checked above").clone();
            let m = self.first_moment[id.index()].data_mut();
            let v = self.second_moment[id.index()].data_mut();
            let p = params.value_mut(id).data_mut();
            for i in 0..p.len() {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let old = p[i];
                p[i] = old - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * old;
            }
        }
        Ok(())
    }
}
