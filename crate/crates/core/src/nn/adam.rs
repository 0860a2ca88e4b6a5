//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub lr: F,
}

impl<F: Real> AdamState<F> {
    /// `β₁ = 0`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn new(len: usize, lr: F) -> Self {
        Self::with_betas(len, lr, F::zero(), F::lit(0.999), F::lit(1e-8))
    }

    pub fn with_betas(len: usize, lr: F, beta1: F, beta2: F, eps: F) -> Self {
        AdamState {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
            beta1,
            beta2,
            eps,
            lr,
        }
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        self.step += 1;
        let one = F::one();
        let k = self.step as i32;
        let c1 = one - self.beta1.powi(k);
        let c2 = one - self.beta2.powi(k);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
