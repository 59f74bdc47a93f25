use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return shape(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape(format!(
                    "adam: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Tensor> {
        vec![
            Tensor::vector(vec![0.5, -1.0, 2.0]),
            Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        ]
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = params();
        let before = p.clone();
        let grads: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..10 {
            st.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.steps(), 10);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let mut p = params();
        let before = p.clone();
        let grads: Vec<Tensor> = p.iter().map(|t| Tensor::full(t.shape(), 0.7)).collect();
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &grads).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_lr_times_sign() {
        // Bias correction makes m̂ = g and v̂ = g² for a constant gradient, so
        // every step has magnitude lr·|g|/(|g|+ε).
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let g = vec![Tensor::vector(vec![0.3, -2.0])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let mut prev = p[0].data().to_vec();
        for _ in 0..200 {
            st.step(&mut p, &g).unwrap();
            let cur = p[0].data().to_vec();
            let d0 = prev[0] - cur[0];
            let d1 = prev[1] - cur[1];
            assert!((d0 - 1e-3).abs() < 1e-9, "{d0}");
            assert!((d1 + 1e-3).abs() < 1e-9, "{d1}");
            prev = cur;
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = params();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let bad = vec![Tensor::vector(vec![0.0; 3]), Tensor::vector(vec![0.0; 4])];
        assert!(st.step(&mut p, &bad).is_err());
    }
}
