//! Loss functions for both training modes, in minimization form.
//!
//! The paired mode uses the log (cross-entropy) adversarial loss with a
//! non-saturating generator term plus a weighted pixel-wise L1 penalty. The
//! unpaired mode uses the least-squares adversarial loss plus a weighted
//! cycle-consistency penalty. Expectations are realized as means over the
//! minibatch and the patch-logit map.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Relative weights of the non-adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_pix: f64,
    pub lambda_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_pix: 100.0, lambda_cycle: 10.0 }
    }
}

/// Discriminator cross-entropy loss:
/// mean bce(real, 1) + mean bce(fake, 0).
pub fn adv_loss_log_d<S: Scalar>(
    tape: &mut Tape<S>,
    d_real_logits: Var,
    d_fake_logits: Var,
) -> Result<Var> {
    let ones = tape.constant(crate::tensor::Tensor::full(
        tape.value(d_real_logits).shape(),
        S::one(),
    ));
    let zeros = tape.constant(crate::tensor::Tensor::zeros(tape.value(d_fake_logits).shape()));
    let real_term = tape.bce_with_logits(d_real_logits, ones)?;
    let real_mean = tape.mean(real_term);
    let fake_term = tape.bce_with_logits(d_fake_logits, zeros)?;
    let fake_mean = tape.mean(fake_term);
    tape.add(real_mean, fake_mean)
}

/// Generator cross-entropy loss, non-saturating form: mean bce(fake, 1).
pub fn adv_loss_log_g<S: Scalar>(tape: &mut Tape<S>, d_fake_logits: Var) -> Result<Var> {
    let ones = tape.constant(crate::tensor::Tensor::full(
        tape.value(d_fake_logits).shape(),
        S::one(),
    ));
    let term = tape.bce_with_logits(d_fake_logits, ones)?;
    Ok(tape.mean(term))
}

/// Mean absolute difference.
pub fn l1_loss<S: Scalar>(tape: &mut Tape<S>, target: Var, prediction: Var) -> Result<Var> {
    let diff = tape.sub(target, prediction)?;
    let a = tape.abs(diff);
    Ok(tape.mean(a))
}

/// Paired-mode generator total: adversarial + lambda_pix · L1.
pub fn pgan_total_g<S: Scalar>(
    tape: &mut Tape<S>,
    adv_g: Var,
    l1: Var,
    w: &LossWeights,
) -> Result<Var> {
    let weighted = tape.scale(l1, S::of_f64(w.lambda_pix));
    tape.add(adv_g, weighted)
}

/// Cycle-consistency loss:
/// mean|x − Gx(Gy(x))| + mean|y − Gy(Gx(y))|.
pub fn cycle_loss<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    x_reconstructed: Var,
    y: Var,
    y_reconstructed: Var,
) -> Result<Var> {
    let term_x = l1_loss(tape, x, x_reconstructed)?;
    let term_y = l1_loss(tape, y, y_reconstructed)?;
    tape.add(term_x, term_y)
}

/// Least-squares discriminator loss: mean (real − 1)² + mean fake².
pub fn adv_loss_lsq_d<S: Scalar>(tape: &mut Tape<S>, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = tape.constant(crate::tensor::Tensor::full(tape.value(d_real).shape(), S::one()));
    let diff = tape.sub(d_real, ones)?;
    let sq_real = tape.square(diff);
    let real_mean = tape.mean(sq_real);
    let sq_fake = tape.square(d_fake);
    let fake_mean = tape.mean(sq_fake);
    tape.add(real_mean, fake_mean)
}

/// Least-squares generator loss: mean (fake − 1)².
pub fn adv_loss_lsq_g<S: Scalar>(tape: &mut Tape<S>, d_fake: Var) -> Result<Var> {
    let ones = tape.constant(crate::tensor::Tensor::full(tape.value(d_fake).shape(), S::one()));
    let diff = tape.sub(d_fake, ones)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Unpaired-mode generator total: adv_x + adv_y + lambda_cycle · cycle.
pub fn cgan_total<S: Scalar>(
    tape: &mut Tape<S>,
    adv_x: Var,
    adv_y: Var,
    cyc: Var,
    w: &LossWeights,
) -> Result<Var> {
    let adv = tape.add(adv_x, adv_y)?;
    let weighted = tape.scale(cyc, S::of_f64(w.lambda_cycle));
    tape.add(adv, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_of(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn log_d_loss_at_uniform_zero_logits() {
        let mut tape = Tape::new();
        let real = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let fake = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let loss = adv_loss_log_d(&mut tape, real, fake).unwrap();
        assert!((scalar_of(&tape, loss) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let g = adv_loss_log_g(&mut tape, fake).unwrap();
        assert!((scalar_of(&tape, g) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_d_loss_vanishes_for_perfect_discriminator() {
        let mut tape = Tape::new();
        let real = tape.constant(Tensor::full(&[4], 40.0));
        let fake = tape.constant(Tensor::full(&[4], -40.0));
        let loss = adv_loss_log_d(&mut tape, real, fake).unwrap();
        assert!(scalar_of(&tape, loss) < 1e-15);
    }

    #[test]
    fn log_g_loss_decreases_in_fake_logits() {
        let mut prev = f64::INFINITY;
        for logit in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let mut tape = Tape::new();
            let fake = tape.constant(Tensor::full(&[8], logit));
            let loss = adv_loss_log_g(&mut tape, fake).unwrap();
            let v = scalar_of(&tape, loss);
            assert!(v < prev, "not strictly decreasing at logit {logit}");
            prev = v;
        }
    }

    #[test]
    fn l1_fixtures() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[5], 0.75));
        let b = tape.constant(Tensor::full(&[5], 0.25));
        let ab = l1_loss(&mut tape, a, b).unwrap();
        assert!((scalar_of(&tape, ab) - 0.5).abs() < 1e-15);
        let ba = l1_loss(&mut tape, b, a).unwrap();
        assert_eq!(scalar_of(&tape, ab), scalar_of(&tape, ba));
        let aa = l1_loss(&mut tape, a, a).unwrap();
        assert_eq!(scalar_of(&tape, aa), 0.0);
    }

    #[test]
    fn pgan_total_fixture() {
        let w = LossWeights { lambda_pix: 100.0, lambda_cycle: 10.0 };
        let mut tape = Tape::new();
        let adv = tape.constant(Tensor::scalar(0.2));
        let l1 = tape.constant(Tensor::scalar(0.01));
        let total = pgan_total_g(&mut tape, adv, l1, &w).unwrap();
        assert!((scalar_of(&tape, total) - 1.2).abs() < 1e-12);

        let w0 = LossWeights { lambda_pix: 0.0, lambda_cycle: 10.0 };
        let total = pgan_total_g(&mut tape, adv, l1, &w0).unwrap();
        assert_eq!(scalar_of(&tape, total), 0.2);
    }

    #[test]
    fn pgan_total_gradient_is_sum_of_component_gradients() {
        let w = LossWeights::default();
        let mk = || {
            let mut tape = Tape::new();
            let p = tape.leaf(Tensor::new(vec![4], vec![0.3, -0.8, 0.4, 1.2]).unwrap(), true);
            let target = tape.constant(Tensor::new(vec![4], vec![0.0, 0.5, -0.5, 1.0]).unwrap());
            (tape, p, target)
        };
        // total loss gradient
        let (mut tape, p, target) = mk();
        let adv = adv_loss_log_g(&mut tape, p).unwrap();
        let l1 = l1_loss(&mut tape, target, p).unwrap();
        let total = pgan_total_g(&mut tape, adv, l1, &w).unwrap();
        tape.backward(total).unwrap();
        let g_total = tape.grad(p).unwrap();
        // component gradients on fresh tapes
        let (mut t1, p1, _) = mk();
        let adv = adv_loss_log_g(&mut t1, p1).unwrap();
        t1.backward(adv).unwrap();
        let g_adv = t1.grad(p1).unwrap();
        let (mut t2, p2, y2) = mk();
        let l1 = l1_loss(&mut t2, y2, p2).unwrap();
        t2.backward(l1).unwrap();
        let g_l1 = t2.grad(p2).unwrap();
        for i in 0..4 {
            let expect = g_adv.data()[i] + w.lambda_pix * g_l1.data()[i];
            assert!((g_total.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_loss_fixtures() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[6], 1.0));
        let y = tape.constant(Tensor::full(&[6], 1.0));
        // identity generators reconstruct exactly
        let c = cycle_loss(&mut tape, x, x, y, y).unwrap();
        assert_eq!(scalar_of(&tape, c), 0.0);
        // all-ones inputs, all-zero reconstructions: 1 + 1
        let zx = tape.constant(Tensor::zeros(&[6]));
        let zy = tape.constant(Tensor::zeros(&[6]));
        let c = cycle_loss(&mut tape, x, zx, y, zy).unwrap();
        assert!((scalar_of(&tape, c) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_nonnegative() {
        let mut rng = crate::rng::SeededRng::seed_from_u64(8);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let mk = |tape: &mut Tape, rng: &mut crate::rng::SeededRng| {
                let t = Tensor::from_fn(&[7], |_| rng.uniform_in(-2.0, 2.0));
                tape.constant(t)
            };
            let (x, xr, y, yr) =
                (mk(&mut tape, &mut rng), mk(&mut tape, &mut rng), mk(&mut tape, &mut rng), mk(&mut tape, &mut rng));
            let c = cycle_loss(&mut tape, x, xr, y, yr).unwrap();
            assert!(scalar_of(&tape, c) >= 0.0);
        }
    }

    #[test]
    fn lsq_fixtures() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::full(&[9], 1.0));
        let zeros = tape.constant(Tensor::zeros(&[9]));
        let halves = tape.constant(Tensor::full(&[9], 0.5));
        let d0 = adv_loss_lsq_d(&mut tape, ones, zeros).unwrap();
        assert_eq!(scalar_of(&tape, d0), 0.0);
        let dh = adv_loss_lsq_d(&mut tape, halves, halves).unwrap();
        assert!((scalar_of(&tape, dh) - 0.5).abs() < 1e-12);
        let g0 = adv_loss_lsq_g(&mut tape, ones).unwrap();
        assert_eq!(scalar_of(&tape, g0), 0.0);
    }

    #[test]
    fn cgan_total_fixture() {
        let w = LossWeights { lambda_pix: 100.0, lambda_cycle: 10.0 };
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::scalar(0.0));
        let t0 = cgan_total(&mut tape, zero, zero, zero, &w).unwrap();
        assert_eq!(scalar_of(&tape, t0), 0.0);
        let a = tape.constant(Tensor::scalar(0.1));
        let b = tape.constant(Tensor::scalar(0.2));
        let c = tape.constant(Tensor::scalar(0.05));
        let t = cgan_total(&mut tape, a, b, c, &w).unwrap();
        assert!((scalar_of(&tape, t) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cgan_total_strictly_increasing_in_components() {
        let w = LossWeights::default();
        let base = {
            let mut tape = Tape::new();
            let a = tape.constant(Tensor::scalar(0.1));
            let b = tape.constant(Tensor::scalar(0.2));
            let c = tape.constant(Tensor::scalar(0.3));
            let t = cgan_total(&mut tape, a, b, c, &w).unwrap();
            scalar_of(&tape, t)
        };
        for bump in 0..3 {
            let mut tape = Tape::new();
            let vals = [0.1 + f64::from(bump == 0) * 0.01,
                        0.2 + f64::from(bump == 1) * 0.01,
                        0.3 + f64::from(bump == 2) * 0.01];
            let a = tape.constant(Tensor::scalar(vals[0]));
            let b = tape.constant(Tensor::scalar(vals[1]));
            let c = tape.constant(Tensor::scalar(vals[2]));
            let t = cgan_total(&mut tape, a, b, c, &w).unwrap();
            assert!(scalar_of(&tape, t) > base);
        }
    }

    #[test]
    fn losses_differentiate_cleanly() {
        // least-squares generator loss through the tape matches hand gradient
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![2], vec![0.25, 0.75]).unwrap(), true);
        let g = adv_loss_lsq_g(&mut tape, p).unwrap();
        tape.backward(g).unwrap();
        let grad = tape.grad(p).unwrap();
        // d/dp mean (p-1)^2 = 2(p-1)/n
        assert!((grad.data()[0] - 2.0 * (0.25f64 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad.data()[1] - 2.0 * (0.75f64 - 1.0) / 2.0).abs() < 1e-15);
    }
}
