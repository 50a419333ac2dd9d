//! Adam with decoupled weight decay.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: `θ ← θ − lr·decay·θ` alongside the moment step.
    pub weight_decay: f64,
    /// Optional inverse-time schedule `lr_t = lr / (1 + lr_decay·(t−1))`.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-6,
            lr_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. Parameter order must be stable across calls.
    pub fn step(&mut self, params: &mut [(&'static str, &mut Array2<f64>)], grads: &[&Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidInput(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.dim(),
                    right: g.dim(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { name: name.to_string() });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            lr_decay,
        } = self.config;
        let t = self.step as i32;
        let lr = learning_rate / (1.0 + lr_decay * (t - 1) as f64);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            Zip::from(&mut **p).and(*g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps) + lr * weight_decay * *p;
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_step(theta: f64, grad: f64, config: AdamConfig) -> f64 {
        let mut p = array![[theta]];
        let g = array![[grad]];
        let mut adam = Adam::new(config);
        adam.step(&mut [("p", &mut p)], &[&g]).unwrap();
        p[[0, 0]]
    }

    #[test]
    fn unit_gradient_first_step() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let delta = one_step(0.0, 1.0, cfg);
        assert!((delta + 0.01).abs() < 1e-9, "{delta}");
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        assert_eq!(one_step(0.7, 0.0, cfg), 0.7);
    }

    #[test]
    fn decoupled_decay_only() {
        let got = one_step(1.0, 0.0, AdamConfig::default());
        assert_eq!(got, 1.0 - 0.01 * 5e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = array![[1.0]];
        let g = array![[f64::NAN]];
        let err = Adam::new(AdamConfig::default()).step(&mut [("w", &mut p)], &[&g]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref name } if name == "w"));
        assert_eq!(p[[0, 0]], 1.0);
    }

    #[test]
    fn vanishing_learning_rate_keeps_params() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut p = array![[0.3, -2.0]];
        let mut adam = Adam::new(cfg);
        for k in 0..10 {
            let g = array![[k as f64, -1.0]];
            adam.step(&mut [("p", &mut p)], &[&g]).unwrap();
        }
        assert_eq!(p, array![[0.3, -2.0]]);
    }
}
