use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates. Moments are kept per named
/// parameter so they can be checkpointed.
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub const NAME: &'static str = "adam";

    pub fn new(config: AdamConfig, vars: &BTreeMap<String, Var>) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, var) in vars {
            m.insert(name.clone(), var.as_tensor().zeros_like()?);
            v.insert(name.clone(), var.as_tensor().zeros_like()?);
        }
        Ok(Self { config, step: 0, m, v })
    }

    /// Applies one update. Parameters without a gradient keep their value
    /// and their moments decay as if the gradient were zero.
    pub fn apply(&mut self, vars: &BTreeMap<String, Var>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, var) in vars {
            let m = &self.m[name];
            let v = &self.v[name];
            let (m_new, v_new) = match grads.get(name) {
                Some(g) => ((m * c.beta1)?.add(&(g * (1.0 - c.beta1))?)?, (v * c.beta2)?.add(&(g.sqr()? * (1.0 - c.beta2))?)?),
                None => ((m * c.beta1)?, (v * c.beta2)?),
            };
            let denom = ((&v_new / bc2)?.sqrt()? + c.eps)?;
            let update = (((&m_new / bc1)? / denom)? * c.learning_rate)?;
            var.set(&var.as_tensor().sub(&update)?)?;
            self.m.insert(name.clone(), m_new);
            self.v.insert(name.clone(), v_new);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let vars: BTreeMap<String, Var> = [("w".to_string(), var.clone())].into();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &vars).unwrap();
        let g = Tensor::new(&[3.0f64, -0.5], &Device::Cpu).unwrap();
        opt.apply(&vars, &[("w".to_string(), g)].into()).unwrap();
        let w: Vec<f64> = var.as_tensor().to_vec1().unwrap();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let var = Var::from_tensor(&Tensor::new(&[5.0f64], &Device::Cpu).unwrap()).unwrap();
        let vars: BTreeMap<String, Var> = [("x".to_string(), var.clone())].into();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &vars).unwrap();
        for _ in 0..500 {
            let loss = (var.as_tensor() - 2.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            let g = grads.get(var.as_tensor()).unwrap().clone();
            opt.apply(&vars, &[("x".to_string(), g)].into()).unwrap();
        }
        let x: Vec<f64> = var.as_tensor().to_vec1().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-3);
    }
}
