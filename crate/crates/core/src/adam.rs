//! Adam optimizer shared by KGC training and map training.
//!
//! Dense parameter blocks call [`Adam::update`] on the whole buffer; sparse
//! embedding tables update only the rows a batch touched, with the step
//! counter (and thus bias correction) shared across the whole model.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    correction1: f64,
    correction2: f64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            correction1: 1.0,
            correction2: 1.0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter. Call once per optimizer step, before the
    /// `update` calls belonging to that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
        let t = self.step as i32;
        self.correction1 = 1.0 - self.config.beta1.powi(t);
        self.correction2 = 1.0 - self.config.beta2.powi(t);
    }

    /// Applies one Adam update to `params[..]` using the matching window
    /// `moments[offset..offset + params.len()]`.
    pub fn update(&self, params: &mut [f64], grads: &[f64], moments: &mut Moments, offset: usize) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert!(self.step > 0, "begin_step must precede update");
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let end = offset + params.len();
        let m = &mut moments.m[offset..end];
        let v = &mut moments.v[offset..end];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / self.correction1;
            let v_hat = v[i] / self.correction2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
