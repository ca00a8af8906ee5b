use serde::{Deserialize, Serialize};

use super::{Network, Real};
use crate::error::{Error, Result};

/// Bias-corrected Adam. The learning rate is kept in `f64` so scheduler
/// arithmetic is exact.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on `net`.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        if self.moments.is_empty() {
            net.visit_params(&mut |p| {
                self.moments
                    .push((vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
            });
        }
        let mut shapes_ok = self.moments.len() == net.n_param_tensors();
        if shapes_ok {
            let mut i = 0;
            net.visit_params(&mut |p| {
                shapes_ok &= self.moments[i].0.len() == p.len();
                i += 1;
            });
        }
        if !shapes_ok {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match the network".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let lr = T::lit(self.lr);
        let (inv_c1, inv_c2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
        let eps = T::lit(self.eps);
        let mut i = 0;
        let moments = &mut self.moments;
        net.visit_params_mut(&mut |p| {
            let (m, v) = &mut moments[i];
            for ((w, &g), (m, v)) in p
                .value
                .iter_mut()
                .zip(&p.grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            i += 1;
        });
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule driven by a monitored loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
    best: f64,
    wait: usize,
    history: Vec<f64>,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            patience: 4,
            factor: 0.5,
            min_lr: 1e-4,
            min_delta: 1e-8,
            best: f64::INFINITY,
            wait: 0,
            history: Vec::new(),
        }
    }

    /// Records `loss` and returns the learning rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        self.history.push(loss);
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}
