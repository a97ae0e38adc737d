//! AdamW with decoupled weight decay, and plain gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Real, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&b1)
            && (0.0..1.0).contains(&b2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid AdamW settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// One update of every parameter from its accumulated gradient. A
    /// missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor4<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        let expected: Vec<usize> = self.first.iter().map(Vec::len).collect();
        let actual: Vec<usize> = params.iter().map(|p| p.len()).collect();
        if expected != actual {
            return Err(Error::dims("adamw parameter shapes", &expected, &actual));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = c.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2_sqrt = (1.0 - b2.powi(self.step as i32)).sqrt();
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let step_size = T::of(c.lr / bc1);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (inv_bc2, eps) = (T::of(1.0 / bc2_sqrt), T::of(c.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = p.grad.take();
            let zeros;
            let g = match &grad {
                Some(g) => g.as_slice(),
                None => {
                    zeros = vec![T::zero(); p.len()];
                    zeros.as_slice()
                }
            };
            for (((w, &gk), mk), vk) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *w *= decay;
                *mk = b1t * *mk + one_b1 * gk;
                *vk = b2t * *vk + one_b2 * gk * gk;
                *w -= step_size * *mk / (vk.sqrt() * inv_bc2 + eps);
            }
            p.grad = grad;
        }
        Ok(())
    }
}

/// `theta <- theta - lr * grad`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<T: Real>(&self, params: &mut [&mut Tensor4<T>]) {
        let lr = T::of(self.lr);
        for p in params.iter_mut() {
            let Some(g) = p.grad.take() else { continue };
            for (w, gk) in p.data.iter_mut().zip(&g) {
                *w -= lr * *gk;
            }
            p.grad = Some(g);
        }
    }
}
