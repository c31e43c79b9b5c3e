//! Bias-corrected Adam optimizer over flat parameter lists.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Override the learning rate (used by step-decay schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One Adam update in place. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::InvalidArgument(format!(
                    "adam: parameter {i} shape {} vs gradient shape {}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            let g = grads[i].data();
            for j in 0..p.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::filled(Shape::new(1, 1, 2, 2), 1.5)];
        let grads = vec![Tensor::zeros(Shape::new(1, 1, 2, 2))];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..5 {
            state.step(&mut params, &grads).unwrap();
        }
        assert!(params[0].data().iter().all(|&v| v == 1.5));
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_matches_hand_evaluated_formula() {
        // Scalar param, g = 1, defaults: bias correction makes m_hat = v_hat = 1,
        // so the update is lr * 1/(1 + eps') ~= lr.
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params, AdamConfig { lr: 1e-3, ..Default::default() });
        state.step(&mut params, &grads).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_gradient_streams_give_identical_trajectories() {
        let shape = Shape::new(1, 1, 3, 3);
        let mut a = vec![Tensor::filled(shape, 0.4)];
        let mut b = vec![Tensor::filled(shape, 0.4)];
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        for step in 0..20 {
            let g = vec![Tensor::filled(shape, (step as f64 * 0.37).sin())];
            sa.step(&mut a, &g).unwrap();
            sb.step(&mut b, &g).unwrap();
        }
        assert_eq!(a[0].data(), b[0].data());
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_param_id() {
        let mut params = vec![Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(1.0), Tensor::scalar(f64::NAN)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        let before = params[0].item();
        match state.step(&mut params, &grads) {
            Err(Error::NonFiniteGradient(1)) => {}
            other => panic!("expected NonFiniteGradient(1), got {other:?}"),
        }
        assert_eq!(params[0].item(), before);
    }
}
