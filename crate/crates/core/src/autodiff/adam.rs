//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Optimizer state: one first/second moment tensor per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) || !config.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                config.lr
            )));
        }
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: usize) -> &Tensor {
        &self.m[id]
    }

    pub fn second_moment(&self, id: usize) -> &Tensor {
        &self.v[id]
    }

    /// Zeroes both moments and the step counter.
    pub fn reset(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().fill(0.0);
        }
        self.step = 0;
    }

    /// One bias-corrected update of every parameter, in place.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::op("adam_step", "parameter/gradient count mismatch"));
        }
        for (id, g) in grads.iter().enumerate() {
            params.tensor(id).expect_same_shape(g)?;
            g.validate_finite().map_err(|e| {
                Error::op("adam_step", format!("gradient `{}`: {e}", params.name(id)))
            })?;
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(id).data_mut();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::scalar(value));
        p
    }

    fn grad(value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(&single(0.0));
        g.get_mut(0).data_mut()[0] = value;
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = single(0.75);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &p).unwrap();
        for _ in 0..20 {
            adam.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.tensor(0).data()[0], 0.75);
        assert_eq!(adam.step_count(), 20);
    }

    #[test]
    fn first_step_moves_by_exactly_lr() {
        let mut p = single(1.0);
        let cfg = AdamConfig {
            eps: 0.0,
            ..AdamConfig::with_lr(0.1)
        };
        let mut adam = Adam::new(cfg, &p).unwrap();
        adam.step(&mut p, &grad(1.0)).unwrap();
        assert_eq!(p.tensor(0).data()[0], 1.0 - 0.1);

        // With the default epsilon the step differs from lr by lr·eps at most.
        let mut p = single(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &p).unwrap();
        adam.step(&mut p, &grad(1.0)).unwrap();
        assert!((p.tensor(0).data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_finite_gradients_and_bad_lr() {
        let mut p = single(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &p).unwrap();
        assert!(adam.step(&mut p, &grad(f64::NAN)).is_err());
        assert_eq!(adam.step_count(), 0);
        assert!(Adam::new(AdamConfig::with_lr(0.0), &p).is_err());
    }

    /// Scalar re-implementation of the recurrence, kept separate from the
    /// tensor path above.
    fn scalar_adam(mut x: f64, grad: impl Fn(f64) -> f64, steps: usize, c: AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = grad(x);
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t as i32));
            let vh = v / (1.0 - c.beta2.powi(t as i32));
            x -= c.lr * mh / (vh.sqrt() + c.eps);
        }
        x
    }

    #[test]
    fn matches_scalar_recurrence_on_quadratic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (a, b, x0): (f64, f64, f64) = (
            rng.gen_range(0.5..3.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-5.0..5.0),
        );
        let df = |x: f64| 2.0 * a * (x - b);
        let cfg = AdamConfig::with_lr(0.05);
        let expected = scalar_adam(x0, df, 10, cfg);

        let mut p = single(x0);
        let mut adam = Adam::new(cfg, &p).unwrap();
        for _ in 0..10 {
            let x = p.tensor(0).data()[0];
            adam.step(&mut p, &grad(df(x))).unwrap();
        }
        assert_eq!(p.tensor(0).data()[0], expected);
    }
}
