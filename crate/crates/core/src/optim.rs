//! Adam optimizer and the two-phase learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults follow the training procedure this engine
/// reproduces: β1 = 0.5, β2 = 0.999, eps = 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers and step counter for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f64> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }
}

/// One bias-corrected Adam update, in place:
/// m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g², p ← p − lr·m̂/(√v̂ + eps).
pub fn adam_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState<S>,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::config(format!(
            "adam_step shape mismatch: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if lr < 0.0 {
        return Err(Error::config(format!("negative learning rate {lr}")));
    }
    state.t += 1;
    let b1 = S::of_f64(hp.beta1);
    let b2 = S::of_f64(hp.beta2);
    let one = S::one();
    let bc1 = S::of_f64(1.0 - hp.beta1.powi(state.t as i32));
    let bc2 = S::of_f64(1.0 - hp.beta2.powi(state.t as i32));
    let lr_s = S::of_f64(lr);
    let eps = S::of_f64(hp.eps);
    let (pm, pv) = (state.m.data_mut(), state.v.data_mut());
    for ((p, &g), (m, v)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(pm.iter_mut().zip(pv.iter_mut()))
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr_s * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Constant learning rate for the first `constant_epochs`, then linear decay
/// to zero at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub constant_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base_lr: 2e-4, total_epochs: 200, constant_epochs: 100 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::config(format!("base_lr {} must be > 0", self.base_lr)));
        }
        if self.constant_epochs == 0 || self.constant_epochs > self.total_epochs {
            return Err(Error::config(format!(
                "constant_epochs {} must be in (0, total_epochs {}]",
                self.constant_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based):
/// `base_lr` while `epoch < constant_epochs`, then
/// `base_lr·(total − epoch)/(total − constant)`.
pub fn lr_at_epoch(epoch: usize, schedule: &LrSchedule) -> Result<f64> {
    schedule.validate()?;
    if epoch >= schedule.total_epochs {
        return Err(Error::usage(format!(
            "epoch {epoch} out of range for {} total epochs",
            schedule.total_epochs
        )));
    }
    if epoch < schedule.constant_epochs || schedule.constant_epochs == schedule.total_epochs {
        return Ok(schedule.base_lr);
    }
    let span = (schedule.total_epochs - schedule.constant_epochs) as f64;
    Ok(schedule.base_lr * (schedule.total_epochs - epoch) as f64 / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_fixture() {
        // w=0, g=1, defaults: m̂=1, v̂=1, so w ≈ -lr/(1+eps)
        let mut w = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[1]);
        adam_step(&mut w, &g, &mut st, 2e-4, AdamParams::default()).unwrap();
        assert_eq!(st.t, 1);
        assert!((w.data()[0] - (-1.99999998e-4)).abs() < 1e-12, "{}", w.data()[0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::new(vec![3], vec![0.5, -0.25, 2.0]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[3]);
        adam_step(&mut w, &g, &mut st, 2e-4, AdamParams::default()).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn trajectories_are_bitwise_deterministic() {
        let run = || {
            let mut w = Tensor::scalar(1.0f64);
            let mut st = AdamState::new(&[1]);
            for i in 0..25 {
                let g = Tensor::scalar(2.0 * w.data()[0] + (i as f64) * 0.01);
                adam_step(&mut w, &g, &mut st, 1e-2, AdamParams::default()).unwrap();
            }
            w.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_betas_give_sign_steps() {
        let hp = AdamParams { beta1: 0.0, beta2: 0.0, eps: 1e-8 };
        let mut w = Tensor::scalar(0.0f64);
        let mut st = AdamState::new(&[1]);
        adam_step(&mut w, &Tensor::scalar(3.7), &mut st, 1e-3, hp).unwrap();
        // m̂ = g, v̂ = g², update ≈ lr·sign(g)
        assert!((w.data()[0] + 1e-3).abs() < 1e-9);
        adam_step(&mut w, &Tensor::scalar(-0.2), &mut st, 1e-3, hp).unwrap();
        assert!(w.data()[0].abs() < 1e-9);
    }

    #[test]
    fn quadratic_descends_monotonically_after_warmup() {
        let mut w = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(&[1]);
        let mut last = f64::INFINITY;
        for step in 0..200 {
            let f = w.data()[0] * w.data()[0];
            if step > 5 {
                assert!(f <= last, "f increased at step {step}: {f} > {last}");
            }
            last = f;
            let g = Tensor::scalar(2.0 * w.data()[0]);
            adam_step(&mut w, &g, &mut st, 2e-4, AdamParams::default()).unwrap();
        }
        assert!(w.data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut w = Tensor::scalar(0.0f64);
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[1]);
        assert!(matches!(
            adam_step(&mut w, &g, &mut st, 1e-3, AdamParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn schedule_fixtures() {
        let s = LrSchedule::default();
        assert_eq!(lr_at_epoch(0, &s).unwrap(), 2e-4);
        assert_eq!(lr_at_epoch(99, &s).unwrap(), 2e-4);
        assert!((lr_at_epoch(150, &s).unwrap() - 1e-4).abs() < 1e-18);
        assert!(matches!(lr_at_epoch(200, &s), Err(Error::Usage(_))));
    }

    #[test]
    fn schedule_is_non_increasing_and_vanishes() {
        let s = LrSchedule { base_lr: 2e-4, total_epochs: 20, constant_epochs: 10 };
        let mut prev = f64::INFINITY;
        for e in 0..20 {
            let lr = lr_at_epoch(e, &s).unwrap();
            assert!(lr <= prev);
            assert!(lr > 0.0);
            prev = lr;
        }
        // limit epoch -> total gives lr -> base/span -> 0 at the boundary
        let last = lr_at_epoch(19, &s).unwrap();
        assert!((last - 2e-4 / 10.0).abs() < 1e-18);
    }
}
