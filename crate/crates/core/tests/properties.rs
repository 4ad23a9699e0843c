//! Property tests for the numeric invariants that hold for all inputs.

use contrastforge_core::conv::{conv2d_forward, conv_transpose2d_forward};
use contrastforge_core::metrics::{psnr, ssim};
use contrastforge_core::optim::{lr_at_epoch, LrSchedule};
use contrastforge_core::tape::Tape;
use contrastforge_core::tensor::{dot, Tensor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_adjoint_identity(
        seed_x in finite_vec(2 * 2 * 10 * 10),
        seed_k in finite_vec(3 * 2 * 4 * 4),
        stride in 1usize..=3,
    ) {
        // conforming input extent for this stride
        let out = 4usize;
        let side = (out - 1) * stride + 4 - 2;
        let x = Tensor::new(vec![2, 2, side, side],
            seed_x.iter().cycle().take(2 * 2 * side * side).copied().collect()).unwrap();
        let k = Tensor::new(vec![3, 2, 4, 4], seed_k).unwrap();
        let fwd = conv2d_forward(&x, &k, None, stride, 1).unwrap();
        let y = Tensor::from_fn(fwd.shape(), |i| ((i * 37 + 11) % 101) as f64 / 50.0 - 1.0);
        let back = conv_transpose2d_forward(&y, &k, stride, 1).unwrap();
        let lhs = dot(&fwd, &y);
        let rhs = dot(&x, &back);
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn instance_norm_zero_mean_per_channel(data in finite_vec(2 * 3 * 4 * 4)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3, 4, 4], data).unwrap(), false);
        let y = tape.instance_norm(x, 1e-5).unwrap();
        let v = tape.value(y);
        for nc in 0..6 {
            let plane = &v.data()[nc * 16..(nc + 1) * 16];
            let mean: f64 = plane.iter().sum::<f64>() / 16.0;
            prop_assert!(mean.abs() < 1e-10, "channel {} mean {}", nc, mean);
        }
    }

    #[test]
    fn forward_evaluation_is_bitwise_deterministic(data in finite_vec(64)) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![1, 1, 8, 8], data.clone()).unwrap(), true);
            let k = tape.constant(Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f64 - 8.0) / 9.0));
            let c = tape.conv2d(x, k, None, 1, 1).unwrap();
            let n = tape.instance_norm(c, 1e-5).unwrap();
            let t = tape.tanh(n);
            let m = tape.mean(t);
            tape.value(m).item().unwrap()
        };
        prop_assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn ssim_symmetric_and_self_similar(
        a in finite_vec(16 * 16),
        b in finite_vec(16 * 16),
    ) {
        let norm = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| (x + 2.0) / 4.0).collect() };
        let x = Tensor::new(vec![16, 16], norm(&a)).unwrap();
        let y = Tensor::new(vec![16, 16], norm(&b)).unwrap();
        let xy = ssim(&x, &y, 1.0).unwrap();
        let yx = ssim(&y, &x, 1.0).unwrap();
        prop_assert!((xy - yx).abs() < 1e-12);
        prop_assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_homogeneous_under_matched_peak(
        a in finite_vec(64),
        b in finite_vec(64),
        scale in 0.1..1.0f64,
    ) {
        let x = Tensor::new(vec![8, 8], a).unwrap();
        let y = Tensor::new(vec![8, 8], b).unwrap();
        prop_assume!(x != y);
        let p1 = psnr(&x, &y, 1.0).unwrap();
        let xs = x.map(|v| v * scale);
        let ys = y.map(|v| v * scale);
        let p2 = psnr(&xs, &ys, scale).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn lr_schedule_non_increasing(
        base in 1e-6..1e-2f64,
        total in 2usize..50,
        frac in 0.1..0.99f64,
    ) {
        let schedule = LrSchedule {
            base_lr: base,
            total_epochs: total,
            constant_epochs: ((total as f64 * frac) as usize).max(1),
        };
        let mut prev = f64::INFINITY;
        for e in 0..total {
            let lr = lr_at_epoch(e, &schedule).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!(lr > 0.0);
            prev = lr;
        }
    }
}
