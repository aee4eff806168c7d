//! Adam and the linear warmup schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers mirroring a parameter list, plus the step counter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of every parameter at learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "adam: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "adam: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (c1, c2, lr, eps) = (T::of(c1), T::of(c2), T::of(lr), T::of(eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = b1 * m[k] + one_b1 * gk;
                v[k] = b2 * v[k] + one_b2 * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr_base · min(1, step / warmup_steps)`, flat afterwards. Steps count from 1.
pub fn warmup_lr(step: u64, lr_base: f64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        lr_base
    } else {
        lr_base * step as f64 / warmup_steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::<f64>::vector(vec![1.5, -2.0]).unwrap()];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::zeros(&[2]).unwrap()], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // m̂ = 1, v̂ = 1, so Δ = -lr / (1 + eps).
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::scalar(1.0)], 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        let got = p[0].data()[0];
        assert!(((got - expected) / expected).abs() < 1e-7, "{got}");
        assert!((got + 0.000999999).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::<f32>::zeros(&[2]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[Tensor::zeros(&[3]).unwrap()], 0.1).is_err());
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(100, 2e-5, 100), 2e-5);
        assert_eq!(warmup_lr(50, 2e-5, 100), 1e-5);
        assert_eq!(warmup_lr(1, 0.3, 0), 0.3);
        assert_eq!(warmup_lr(500, 0.3, 100), 0.3);
    }
}
