use std::collections::{BTreeMap, HashMap};

use candle_core::{Tensor, Var};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0 && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Parameters without a gradient are left
/// untouched, including their decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Apply one update with learning rate `lr`.
    pub fn step(&mut self, params: &[(String, Var)], grads: &HashMap<String, Tensor>, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, var) in params {
            let Some(g) = grads.get(name) else { continue };
            let m = match self.m.get(name) {
                Some(m) => ((m * c.beta1)? + (g * (1.0 - c.beta1))?)?,
                None => (g * (1.0 - c.beta1))?,
            };
            let g2 = g.sqr()?;
            let v = match self.v.get(name) {
                Some(v) => ((v * c.beta2)? + (g2 * (1.0 - c.beta2))?)?,
                None => (g2 * (1.0 - c.beta2))?,
            };
            let p = var.as_tensor();
            let decayed = (p - (p * (lr * c.weight_decay))?)?;
            let denom = ((&v / bc2)?.sqrt()? + c.eps)?;
            let update = ((&m / bc1)? / denom)?;
            let next = (decayed - (update * lr)?)?;
            var.set(&next)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Moment tensors for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let m = self.m.iter().map(|(k, t)| (format!("{M_PREFIX}{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("{V_PREFIX}{k}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn load_state(&mut self, step: usize, tensors: &HashMap<String, Tensor>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix(M_PREFIX) {
                self.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix(V_PREFIX) {
                self.v.insert(name.to_string(), t.clone());
            }
        }
    }
}
