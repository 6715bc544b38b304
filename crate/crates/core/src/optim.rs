//! Adam with bias-corrected moment estimates.

use crate::error::{AenError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState {
                m: Vec::new(),
                v: Vec::new(),
                t: 0,
            },
        }
    }

    /// Updates every tensor from its gradient buffer (a missing buffer counts as zero).
    ///
    /// Buffers are allocated on the first step; later steps must see the same
    /// number of tensors with the same sizes.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        if !(lr > 0.0) {
            return Err(AenError::contract(format!("learning rate {lr} must be positive")));
        }
        let state = &mut self.state;
        if state.t == 0 && state.m.is_empty() {
            state.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            state.v = state.m.clone();
        }
        if state.m.len() != params.len() {
            return Err(AenError::contract(format!(
                "optimizer tracks {} tensors, step got {}",
                state.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if state.m[i].len() != p.len() || p.grad().is_some_and(|g| g.len() != p.len()) {
                return Err(AenError::shape("adam_step", &[state.m[i].len()], p.shape()));
            }
        }

        state.t += 1;
        let t = i32::try_from(state.t).unwrap_or(i32::MAX);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let one = T::one();
        let correction1 = one - b1.powi(t);
        let correction2 = one - b2.powi(t);
        let (lr, eps) = (T::of(lr), T::of(eps));

        for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
            let grad = p.grad().map(<[T]>::to_vec);
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
