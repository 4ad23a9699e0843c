//! Dense n-dimensional tensors in row-major layout.
//!
//! [`Tensor`] is the plain value type: shape plus data. Gradient tracking
//! lives on the [`crate::tape::Tape`], which records operations over tensors
//! and owns the per-node gradient buffers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array of [`Scalar`] values. Defaults to double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::usage(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::usage(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); numel] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..numel).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::usage(format!("item() on tensor of {} elements", self.data.len())));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::usage(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Zero-pad along every axis; `pads[d] = (before, after)`. Existing values
    /// keep their relative position after the leading pad.
    pub fn pad_zero(&self, pads: &[(usize, usize)]) -> Result<Self> {
        if pads.len() != self.shape.len() {
            return Err(Error::usage(format!(
                "pad_zero expects {} axis pads, got {}",
                self.shape.len(),
                pads.len()
            )));
        }
        let out_shape: Vec<usize> =
            self.shape.iter().zip(pads).map(|(&d, &(b, a))| d + b + a).collect();
        let mut out = Tensor::zeros(&out_shape);
        let in_strides = strides(&self.shape);
        let out_strides = strides(&out_shape);
        let mut idx = vec![0usize; self.shape.len()];
        for (lin, &v) in self.data.iter().enumerate() {
            unravel(lin, &in_strides, &mut idx);
            let mut out_lin = 0;
            for d in 0..idx.len() {
                out_lin += (idx[d] + pads[d].0) * out_strides[d];
            }
            out.data[out_lin] = v;
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Tensor<f64> {
    /// Lossy narrowing used by the precision escape hatch; exact when the
    /// stored values originated as `S`.
    pub fn cast<S: Scalar>(&self) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| S::of_f64(v)).collect() }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn widen(&self) -> Tensor<f64> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| v.as_f64()).collect() }
    }
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn unravel(mut lin: usize, strides: &[usize], idx: &mut [usize]) {
    for d in 0..strides.len() {
        idx[d] = lin / strides[d];
        lin %= strides[d];
    }
}

/// Flat inner product of two equal-length tensors, f64 accumulate.
pub fn dot<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    assert_eq!(a.numel(), b.numel());
    a.data().iter().zip(b.data()).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_must_agree() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn pad_zero_preserves_corner_block() {
        let t = Tensor::new(vec![3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let p = t.pad_zero(&[(0, 1), (0, 1)]).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        // original values in the leading corner
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(p.data()[r * 4 + c], (r * 3 + c + 1) as f64);
            }
        }
        // zeros elsewhere
        assert_eq!(p.data()[3], 0.0);
        assert_eq!(p.data()[15], 0.0);
    }

    #[test]
    fn pad_zero_centered() {
        let t = Tensor::new(vec![1, 2], vec![5.0, 6.0]).unwrap();
        let p = t.pad_zero(&[(1, 1), (1, 1)]).unwrap();
        assert_eq!(p.shape(), &[3, 4]);
        assert_eq!(p.data()[4 + 1], 5.0);
        assert_eq!(p.data()[4 + 2], 6.0);
        assert_eq!(p.data().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    }
}
