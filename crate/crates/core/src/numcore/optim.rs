use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over `total_steps`.
    Cosine,
}

/// SGD with heavy-ball momentum:
/// `v <- momentum * v + grad`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    base_lr: f64,
    momentum: f64,
    schedule: Schedule,
    total_steps: usize,
    step: usize,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, schedule: Schedule, total_steps: usize) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            base_lr: lr,
            momentum,
            schedule,
            total_steps: total_steps.max(1),
            step: 0,
            velocity: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate applied at step `t` (0-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::Cosine => {
                let frac = (t as f64 / self.total_steps as f64).min(1.0);
                0.5 * self.base_lr * (1.0 + (PI * frac).cos())
            }
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update to every parameter and clears their gradients.
    ///
    /// The parameter list must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer registered {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (i, (p, v)) in params.iter().zip(&self.velocity).enumerate() {
            if p.len() != v.len() {
                return Err(Error::Shape {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![v.len()],
                });
            }
            if p.grad().is_none() {
                return Err(Error::MissingGrad(i));
            }
        }
        let lr = self.lr_at(self.step);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let g = p.grad().expect("checked above").to_vec();
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = self.momentum * *vi + gi;
            }
            for (pi, vi) in p.data_mut().iter_mut().zip(v.iter()) {
                *pi -= lr * vi;
            }
            p.clear_grad();
            if !p.all_finite() {
                return Err(Error::NonFinite { op: "sgd_step" });
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor {
        let mut p = Tensor::scalar(v).unwrap().with_grad();
        p.accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn plain_step() {
        let mut opt = Sgd::new(1.0, 0.0, Schedule::Constant, 10).unwrap();
        let mut p = param(0.0, 2.0);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.item(), -2.0);
        assert!(p.grad().is_none());
    }

    #[test]
    fn momentum_recurrence() {
        let g = 0.7;
        let mut opt = Sgd::new(0.1, 0.9, Schedule::Constant, 10).unwrap();
        let mut p = param(0.0, g);
        opt.step(&mut [&mut p]).unwrap();
        p.accumulate_grad(&[g]).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((opt.velocity()[0][0] - 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn cosine_half_way() {
        let opt = Sgd::new(0.002, 0.9, Schedule::Cosine, 100).unwrap();
        assert!((opt.lr_at(50) - 0.001).abs() < 1e-15);
        assert_eq!(opt.lr_at(0), 0.002);
        assert!(opt.lr_at(100).abs() < 1e-18);
    }

    #[test]
    fn missing_grad_is_error() {
        let mut opt = Sgd::new(0.1, 0.0, Schedule::Constant, 1).unwrap();
        let mut p = Tensor::scalar(1.0).unwrap().with_grad();
        assert!(matches!(opt.step(&mut [&mut p]), Err(Error::MissingGrad(0))));
    }

    #[test]
    fn rejects_bad_momentum() {
        assert!(Sgd::new(0.1, 1.0, Schedule::Constant, 1).is_err());
    }
}
