//! Adam optimizer with L2 regularization folded into the gradient, plus the
//! stepped learning-rate schedule used by the training loops. Optimizer state
//! is positional: the caller must feed parameters in a stable order.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

struct AdamSlot<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
}

pub struct Adam<S: Scalar> {
    lr: f64,
    weight_decay: f64,
    /// Completed step count; bias correction uses the current step number.
    t: u64,
    slots: Vec<Option<AdamSlot<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, weight_decay: f64) -> Adam<S> {
        Adam { lr, weight_decay, t: 0, slots: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Starts one optimizer step covering a batch of `update` calls, all of
    /// which share the new step's bias correction.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies Adam to one parameter tensor, identified by its stable
    /// position `idx` in the caller's parameter order.
    pub fn update(&mut self, idx: usize, param: &mut Tensor<S>, grad: &[S]) -> Result<()> {
        if self.t == 0 {
            return Err(Error::Config("begin_step must run before update".to_string()));
        }
        let n = param.shape().numel();
        if grad.len() != n {
            return Err(Error::Shape {
                op: "adam_update",
                detail: format!("parameter has {n} elements but gradient has {}", grad.len()),
            });
        }
        if idx >= self.slots.len() {
            self.slots.resize_with(idx + 1, || None);
        }
        let slot = self.slots[idx].get_or_insert_with(|| AdamSlot {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
        });
        if slot.m.len() != n {
            return Err(Error::Shape {
                op: "adam_update",
                detail: format!(
                    "optimizer slot {idx} was created for {} elements, now sees {n}",
                    slot.m.len()
                ),
            });
        }
        let b1 = S::from_f64(ADAM_BETA1);
        let b2 = S::from_f64(ADAM_BETA2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - ADAM_BETA1.powi(self.t as i32));
        let corr2 = S::from_f64(1.0 - ADAM_BETA2.powi(self.t as i32));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(ADAM_EPS);
        let wd = S::from_f64(self.weight_decay);
        let data = param.data_mut();
        for i in 0..n {
            let g = grad[i] + wd * data[i];
            slot.m[i] = b1 * slot.m[i] + (one - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (one - b2) * g * g;
            let m_hat = slot.m[i] / corr1;
            let v_hat = slot.v[i] / corr2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Stepped decay: the rate halves every `round(total / 2.6)` epochs (at least
/// one), so a run of any length sees the same number of halvings as the
/// reference schedule.
pub fn lr_at_epoch(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    let half_every = ((total_epochs as f64 / 2.6).round() as usize).max(1);
    base * 0.5f64.powi((epoch / half_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut opt = Adam::<f64>::new(1e-3, 0.0);
        let mut p = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.data().to_vec();
        for _ in 0..10 {
            opt.begin_step();
            opt.update(0, &mut p, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(p.data(), &before[..], "nothing moves without gradient or decay");
    }

    #[test]
    fn constant_gradient_approaches_sign_steps() {
        let mut opt = Adam::<f64>::new(1e-2, 0.0);
        let mut p = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 0.0]).unwrap();
        let g = [3.0, -0.25];
        let mut prev = p.data().to_vec();
        for step in 0..400 {
            opt.begin_step();
            opt.update(0, &mut p, &g).unwrap();
            if step > 300 {
                let dx = p.data()[0] - prev[0];
                let dy = p.data()[1] - prev[1];
                assert!(
                    (dx + 1e-2).abs() < 1e-4 && (dy - 1e-2).abs() < 1e-4,
                    "late steps settle near lr * -sign(g), got {dx} {dy}"
                );
            }
            prev = p.data().to_vec();
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut opt = Adam::<f64>::new(1e-2, 0.1);
        let mut p = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        for _ in 0..50 {
            opt.begin_step();
            opt.update(0, &mut p, &[0.0]).unwrap();
        }
        assert!(p.data()[0] < 1.0 && p.data()[0] > 0.0);
    }

    #[test]
    fn slot_shape_changes_are_rejected() {
        let mut opt = Adam::<f64>::new(1e-3, 0.0);
        let mut a = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        opt.begin_step();
        opt.update(0, &mut a, &[0.1, 0.1]).unwrap();
        let mut b = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        assert!(opt.update(0, &mut b, &[0.1, 0.1, 0.1]).is_err());
        assert!(opt.update(1, &mut b, &[0.1, 0.1]).is_err(), "gradient length must match");
    }

    #[test]
    fn schedule_halves_proportionally() {
        // 26 epochs halve every 10: epochs 0..9 full rate, 10..19 half, 20.. quarter
        assert_eq!(lr_at_epoch(1.0, 0, 26), 1.0);
        assert_eq!(lr_at_epoch(1.0, 9, 26), 1.0);
        assert_eq!(lr_at_epoch(1.0, 10, 26), 0.5);
        assert_eq!(lr_at_epoch(1.0, 25, 26), 0.25);
        // tiny runs still halve at least once per computed interval
        assert_eq!(lr_at_epoch(1.0, 1, 2), 0.5);
        assert_eq!(lr_at_epoch(1.0, 0, 1), 1.0);
    }
}
