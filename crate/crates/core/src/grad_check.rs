//! Finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at `point`, returning the worst relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// The function must be pure and smooth near `point`; callers are responsible
/// for choosing points away from activation kinks (see [`Tape::kink_margin`]).
pub fn grad_check<S, F>(f: F, point: &Tensor<S>, step: f64) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), false);
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item()?.as_f64())
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad_or_zero(x);

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + S::of_f64(step);
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - S::of_f64(step);
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
