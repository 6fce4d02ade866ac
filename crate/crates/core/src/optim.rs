use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.beta1) || !ok(self.beta2) {
            return Err(Error::Config(format!(
                "optimizer betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("optimizer eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment tensors are kept in the same order as
/// the parameter store they were created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, config: AdamConfig) -> Result<Self> {
        let zeros = store
            .vars()
            .iter()
            .map(|v| Ok(v.as_tensor().zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// One update of every parameter in `store`. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Validation("optimizer state does not match the parameter set".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, var) in store.vars().iter().enumerate() {
            // Gradients can still reference the backward graph; the moments
            // must not keep it alive across steps.
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => var.as_tensor().zeros_like()?,
            };
            let m = ((&self.m[i] * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            if self.lr != 0.0 {
                let denom = ((&v / c2)?.sqrt()? + eps)?;
                let update = ((&m / c1)? / denom)?;
                var.set(&(var.as_tensor().detach() - (update * self.lr)?)?)?;
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}
