//! Adaptive-moment optimizer with per-parameter state keyed by name.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("betas must be in [0, 1), got {beta1}, {beta2}")));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            state: BTreeMap::new(),
        })
    }

    /// First-moment-free variant (`beta1 = 0`) used for adapter tuning.
    pub fn momentum_free(lr: f64) -> Result<Self> {
        Self::new(lr, 0.0, 0.999)
    }

    /// Bias-corrected update of `param` from `grad`. Each parameter keeps its own
    /// step count, so parameters updated on different steps stay independent.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &[f64]) -> Result<()> {
        if grad.len() != param.numel() {
            return Err(Error::Dimension(format!(
                "gradient for {name} has {} elements, parameter has {}",
                grad.len(),
                param.numel()
            )));
        }
        let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            steps: 0,
        });
        st.steps += 1;
        let c1 = 1.0 - self.beta1.powi(st.steps);
        let c2 = 1.0 - self.beta2.powi(st.steps);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(&mut st.m)
            .zip(&mut st.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn steps(&self, name: &str) -> u32 {
        self.state.get(name).map_or(0, |s| s.steps as u32)
    }
}
