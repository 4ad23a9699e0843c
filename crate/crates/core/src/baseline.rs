//! Per-pixel intensity regression baseline: a cubic polynomial least-squares
//! fit of target intensity against source intensity, applied pixelwise.
//!
//! This is the comparison floor: anything exploiting spatial context should
//! beat it wherever the voxelwise intensity mapping is ambiguous.

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Fitted cubic y = c0 + c1·x + c2·x² + c3·x³.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicMap {
    pub coeffs: [f64; 4],
}

impl CubicMap {
    pub fn apply_scalar(&self, x: f64) -> f64 {
        let [c0, c1, c2, c3] = self.coeffs;
        ((c3 * x + c2) * x + c1) * x + c0
    }

    /// Apply the map voxelwise.
    pub fn apply(&self, v: &Volume) -> Volume {
        let mut out = v.clone();
        for x in &mut out.data {
            *x = self.apply_scalar(*x);
        }
        out
    }
}

/// Least-squares cubic over pooled (source, target) intensity pairs, via the
/// 4×4 normal equations.
pub fn fit_cubic(pairs: impl Iterator<Item = (f64, f64)>) -> Result<CubicMap> {
    // accumulate sum x^k for k=0..6 and sum x^k y for k=0..3
    let mut pow_sums = [0.0f64; 7];
    let mut rhs = [0.0f64; 4];
    let mut n = 0usize;
    for (x, y) in pairs {
        let mut xp = 1.0;
        for (k, slot) in pow_sums.iter_mut().enumerate() {
            *slot += xp;
            if k < 4 {
                rhs[k] += xp * y;
            }
            xp *= x;
        }
        n += 1;
    }
    if n < 100 {
        return Err(Error::data(format!("cubic fit needs >= 100 sample pixels, got {n}")));
    }
    let mut a = [[0.0f64; 5]; 4];
    for (r, row) in a.iter_mut().enumerate() {
        for c in 0..4 {
            row[c] = pow_sums[r + c];
        }
        row[4] = rhs[r];
    }
    // Gaussian elimination with partial pivoting
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-12 * pow_sums[0].max(1.0) {
            return Err(Error::data("degenerate design matrix in cubic fit"));
        }
        a.swap(col, pivot);
        for r in 0..4 {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for c in col..5 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut coeffs = [0.0f64; 4];
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c = a[i][4] / a[i][i];
    }
    Ok(CubicMap { coeffs })
}

/// Fit the baseline on registered (source, target) volume pairs, pooling every
/// voxel as one intensity sample.
pub fn baseline_regress(pairs: &[(Volume, Volume)]) -> Result<CubicMap> {
    for (s, t) in pairs {
        if s.dims != t.dims {
            return Err(Error::data(format!(
                "baseline pair dims {:?} vs {:?}",
                s.dims, t.dims
            )));
        }
    }
    fit_cubic(
        pairs
            .iter()
            .flat_map(|(s, t)| s.data.iter().zip(&t.data).map(|(&x, &y)| (x, y))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::volume::{Alignment, Contrast};

    fn vol(data: Vec<f64>) -> Volume {
        let n = data.len();
        assert_eq!(n % 256, 0);
        Volume {
            dims: [n / 256, 16, 16],
            data,
            contrast: Contrast::T1w,
            alignment: Alignment::Registered,
        }
    }

    #[test]
    fn exact_identity_recovery() {
        let mut rng = SeededRng::seed_from_u64(4);
        let src: Vec<f64> = (0..1024).map(|_| rng.uniform()).collect();
        let s = vol(src.clone());
        let t = vol(src);
        let map = baseline_regress(&[(s.clone(), t.clone())]).unwrap();
        let pred = map.apply(&s);
        let l1: f64 = pred.data.iter().zip(&t.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
            / 1024.0;
        assert!(l1 < 1e-6, "l1 {l1}");
    }

    #[test]
    fn linear_recovery() {
        let mut rng = SeededRng::seed_from_u64(9);
        let src: Vec<f64> = (0..2048).map(|_| rng.uniform()).collect();
        let tgt: Vec<f64> = src.iter().map(|&x| 2.0 * x).collect();
        let map = baseline_regress(&[(vol(src), vol(tgt))]).unwrap();
        let [c0, c1, c2, c3] = map.coeffs;
        assert!(c0.abs() < 1e-8 && (c1 - 2.0).abs() < 1e-8 && c2.abs() < 1e-7 && c3.abs() < 1e-7,
            "coeffs {:?}", map.coeffs);
    }

    #[test]
    fn constant_target_gives_constant_map() {
        let mut rng = SeededRng::seed_from_u64(13);
        let src: Vec<f64> = (0..1024).map(|_| rng.uniform()).collect();
        let tgt = vec![0.42; 1024];
        let map = baseline_regress(&[(vol(src), vol(tgt))]).unwrap();
        for x in [0.0, 0.3, 0.8, 1.0] {
            assert!((map.apply_scalar(x) - 0.42).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_samples_is_data_error() {
        let pairs = (0..50).map(|i| (i as f64, i as f64));
        assert!(matches!(fit_cubic(pairs), Err(Error::Data(_))));
    }

    #[test]
    fn degenerate_design_is_data_error() {
        // constant source: columns of the design matrix are linearly dependent
        let pairs = (0..200).map(|_| (0.5, 1.0));
        assert!(matches!(fit_cubic(pairs), Err(Error::Data(_))));
    }
}
