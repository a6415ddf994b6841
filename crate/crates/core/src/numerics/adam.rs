//! Adam with bias-corrected moments.
//!
//! For step `t` (incremented before use) and gradient `g`:
//!
//! ```text
//! m_t = β₁ m_{t-1} + (1 − β₁) g
//! v_t = β₂ v_{t-1} + (1 − β₂) g²
//! m̂_t = m_t / (1 − β₁ᵗ)      v̂_t = v_t / (1 − β₂ᵗ)
//! θ_t = θ_{t-1} − α m̂_t / (√v̂_t + ε)
//! ```

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
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
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn for_tensors(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.shape() != m.shape() {
                return Err(Error::shape("adam_step", p.shape(), m.shape()));
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr / (v_hat.sqrt() + eps) * m_hat;
            }
        }
        Ok(())
    }

    pub fn step_params(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        self.step(params.tensors_mut(), grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![0.3, -1.2])];
        let mut adam = AdamState::for_tensors(AdamConfig::with_lr(0.1), &params);
        adam.step(&mut params, &[Tensor::zeros(vec![2])]).unwrap();
        assert_eq!(params[0].data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_by_hand() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = AdamState::for_tensors(AdamConfig::with_lr(0.1), &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        assert!((adam.first_moment()[0].data()[0] - 0.1).abs() < 1e-15);
        assert!((adam.second_moment()[0].data()[0] - 0.001).abs() < 1e-15);
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn step_magnitude_is_lr_at_t1() {
        for g in [0.003, -2.0, 40.0] {
            let mut params = vec![Tensor::scalar(1.0)];
            let mut adam = AdamState::for_tensors(AdamConfig::with_lr(0.01), &params);
            adam.step(&mut params, &[Tensor::scalar(g)]).unwrap();
            let delta = (params[0].data()[0] - 1.0).abs();
            // m̂ = g and √v̂ = |g| at t = 1, so only ε separates the step from α
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "g={g} delta={delta}");
            assert!((delta - 0.01).abs() / 0.01 < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let mut adam = AdamState::for_tensors(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Tensor::zeros(vec![3])]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert_eq!(adam.step_count(), 0);
    }
}
