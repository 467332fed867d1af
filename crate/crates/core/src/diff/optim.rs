use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Bias-corrected Adam state for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64, base_lr: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            base_lr,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Step counter; the next update uses `t + 1` for bias correction.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(name)
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One Adam update of every non-frozen parameter at learning rate `lr`,
/// then clears all gradients.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        if !p.frozen && p.tensor.grad().is_none() {
            return Err(Error::MissingGrad(name.to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    for (name, p) in params.iter_mut() {
        if p.frozen {
            continue;
        }
        let n = p.tensor.len();
        let g = p.tensor.grad().expect("checked above").to_vec();
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for (((w, gi), mi), vi) in p
            .tensor
            .values_mut()
            .iter_mut()
            .zip(&g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.clear_grads();
    Ok(())
}

/// Constant learning rate for the warm epochs, then a linear decay that
/// reaches zero at `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub warm_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            total_epochs: 50,
            warm_epochs: 25,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(self.at(epoch as f64))
    }

    /// The schedule as a continuous function of (fractional) epochs,
    /// clamped to zero past `total_epochs`.
    pub fn at(&self, epoch: f64) -> f64 {
        let warm = self.warm_epochs as f64;
        let total = self.total_epochs as f64;
        if epoch < warm {
            self.base_lr
        } else if epoch >= total {
            0.0
        } else {
            self.base_lr * (total - epoch) / (total - warm)
        }
    }
}

impl AdamState {
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        adam_step(params, self, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn one_param(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("p", Tensor::scalar(value));
        ps.get_mut("p").unwrap().tensor.accumulate_grad(&[grad]).unwrap();
        ps
    }

    #[test]
    fn first_step_closed_form() {
        let mut ps = one_param(1.0, 1.0);
        let mut st = AdamState::new(0.5, 0.999, 1e-8, 0.1);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((ps.tensor("p").unwrap().item() - expected).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
        assert!(ps.tensor("p").unwrap().grad().is_none());
    }

    #[test]
    fn frozen_untouched() {
        let mut ps = one_param(1.0, 1.0);
        ps.set_frozen("p", true).unwrap();
        let mut st = AdamState::new(0.5, 0.999, 1e-8, 0.1);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps.tensor("p").unwrap().item(), 1.0);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut ps = one_param(0.3, 0.0);
        let mut st = AdamState::new(0.5, 0.999, 1e-8, 0.1);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps.tensor("p").unwrap().item(), 0.3);
    }

    #[test]
    fn missing_grad_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(1.0));
        let mut st = AdamState::new(0.5, 0.999, 1e-8, 0.1);
        assert!(matches!(
            adam_step(&mut ps, &mut st, 0.1),
            Err(Error::MissingGrad(name)) if name == "w"
        ));
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0).unwrap(), 1e-4);
        assert_eq!(s.lr(24).unwrap(), 1e-4);
        assert_eq!(s.lr(25).unwrap(), 1e-4);
        assert!((s.lr(40).unwrap() - 0.4e-4).abs() < 1e-18);
        assert!(s.lr(50).is_err());
        assert_eq!(s.at(50.0), 0.0);
    }

    #[test]
    fn schedule_non_increasing() {
        let s = LrSchedule::default();
        let lrs: Vec<f64> = (0..50).map(|e| s.lr(e).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
