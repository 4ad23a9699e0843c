//! 2-D convolution kernels (cross-correlation convention, no kernel flip).
//!
//! Three primitives cover both directions: the forward map (im2col + GEMM),
//! its adjoint w.r.t. the input (GEMM + col2im scatter), and the kernel
//! gradient. Transposed convolution is *defined* as the adjoint of the
//! forward map, so it reuses the same kernels with roles exchanged and the
//! inner-product identity `<conv(x,K), y> == <x, convT(y,K)>` holds by
//! construction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output spatial size of a convolution: floor((n + 2p - k)/s) + 1.
pub fn conv_out_dim(n: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    if n + 2 * padding < k {
        return Err(Error::config(format!(
            "input extent {n} with padding {padding} is smaller than kernel {k}"
        )));
    }
    Ok((n + 2 * padding - k) / stride + 1)
}

/// Output spatial size of a transposed convolution: (n - 1)·s - 2p + k.
pub fn convt_out_dim(n: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    let grown = (n - 1) * stride + k;
    if grown < 2 * padding + 1 {
        return Err(Error::config(format!(
            "transposed conv of extent {n} (kernel {k}, stride {stride}) underflows with padding {padding}"
        )));
    }
    Ok(grown - 2 * padding)
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_dims<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let ish = input.shape();
    let ksh = kernel.shape();
    if ish.len() != 4 || ksh.len() != 4 {
        return Err(Error::config(format!(
            "conv2d expects rank-4 input and kernel, got {ish:?} and {ksh:?}"
        )));
    }
    let (batch, c_in, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (c_out, kc_in, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    if c_in != kc_in {
        return Err(Error::config(format!(
            "input has {c_in} channels but kernel expects {kc_in}"
        )));
    }
    let oh = conv_out_dim(h, kh, stride, padding)?;
    let ow = conv_out_dim(w, kw, stride, padding)?;
    Ok(ConvDims { batch, c_in, h, w, c_out, kh, kw, oh, ow })
}

/// Gather input patches into a (c_in·kh·kw) × (oh·ow) column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    input: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    col: &mut [S],
) {
    let n_cols = oh * ow;
    debug_assert_eq!(col.len(), c_in * kh * kw * n_cols);
    for c in 0..c_in {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * n_cols;
                for oy in 0..oh {
                    let iy = (oy * stride + u) as isize - padding as isize;
                    let dst = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + ow].fill(S::zero());
                        continue;
                    }
                    let src_row = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + v) as isize - padding as isize;
                        col[dst + ox] = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            plane[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto the input plane (adjoint of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [S],
) {
    let n_cols = oh * ow;
    for c in 0..c_in {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * n_cols;
                for oy in 0..oh {
                    let iy = (oy * stride + u) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = row + oy * ow;
                    let dst_row = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + v) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[dst_row + ix as usize] += col[src_row + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Input [N,Cin,H,W] ⋆ kernel [Cout,Cin,kH,kW] → [N,Cout,H',W'].
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let d = check_dims(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::config(format!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                d.c_out
            )));
        }
    }
    let k_dim = d.c_in * d.kh * d.kw;
    let n_cols = d.oh * d.ow;
    let mut col = vec![S::zero(); k_dim * n_cols];
    let mut out = Tensor::zeros(&[d.batch, d.c_out, d.oh, d.ow]);
    let in_plane = d.c_in * d.h * d.w;
    let out_plane = d.c_out * n_cols;
    for n in 0..d.batch {
        im2col(
            &input.data()[n * in_plane..(n + 1) * in_plane],
            d.c_in,
            d.h,
            d.w,
            d.kh,
            d.kw,
            stride,
            padding,
            d.oh,
            d.ow,
            &mut col,
        );
        let dst = &mut out.data_mut()[n * out_plane..(n + 1) * out_plane];
        S::gemm(d.c_out, k_dim, n_cols, S::one(), kernel.data(), &col, S::zero(), dst);
        if let Some(b) = bias {
            for c in 0..d.c_out {
                let bv = b.data()[c];
                for v in &mut dst[c * n_cols..(c + 1) * n_cols] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d_forward`] w.r.t. the input: maps [N,Cout,H',W'] back to
/// [N,Cin,H,W] for the given input spatial extents.
pub fn conv2d_input_grad<S: Scalar>(
    out_grad: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
    input_hw: (usize, usize),
) -> Result<Tensor<S>> {
    let ksh = kernel.shape();
    let gsh = out_grad.shape();
    let (c_out, c_in, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
    if gsh.len() != 4 || gsh[1] != c_out {
        return Err(Error::config(format!(
            "adjoint input {gsh:?} does not match kernel {ksh:?}"
        )));
    }
    let (batch, oh, ow) = (gsh[0], gsh[2], gsh[3]);
    let (h, w) = input_hw;
    if conv_out_dim(h, kh, stride, padding)? != oh || conv_out_dim(w, kw, stride, padding)? != ow {
        return Err(Error::config(format!(
            "adjoint spatial size {oh}x{ow} inconsistent with input {h}x{w}"
        )));
    }
    let k_dim = c_in * kh * kw;
    let n_cols = oh * ow;
    let mut col = vec![S::zero(); k_dim * n_cols];
    let mut out = Tensor::zeros(&[batch, c_in, h, w]);
    let g_plane = c_out * n_cols;
    let in_plane = c_in * h * w;
    for n in 0..batch {
        // col = kernelT · g   (kernel viewed as [c_out, k_dim])
        S::gemm_strided(
            k_dim,
            c_out,
            n_cols,
            S::one(),
            kernel.data(),
            (1, k_dim as isize),
            &out_grad.data()[n * g_plane..(n + 1) * g_plane],
            (n_cols as isize, 1),
            S::zero(),
            &mut col,
            (n_cols as isize, 1),
        );
        col2im(
            &col,
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
            &mut out.data_mut()[n * in_plane..(n + 1) * in_plane],
        );
    }
    Ok(out)
}

/// Gradient of a convolution w.r.t. its kernel, accumulated over the batch.
pub fn conv2d_kernel_grad<S: Scalar>(
    input: &Tensor<S>,
    out_grad: &Tensor<S>,
    stride: usize,
    padding: usize,
    kernel_shape: &[usize],
) -> Result<Tensor<S>> {
    let (c_out, c_in, kh, kw) = (kernel_shape[0], kernel_shape[1], kernel_shape[2], kernel_shape[3]);
    let ish = input.shape();
    let gsh = out_grad.shape();
    let (batch, h, w) = (ish[0], ish[2], ish[3]);
    let (oh, ow) = (gsh[2], gsh[3]);
    debug_assert_eq!(ish[1], c_in);
    debug_assert_eq!(gsh[1], c_out);
    let k_dim = c_in * kh * kw;
    let n_cols = oh * ow;
    let mut col = vec![S::zero(); k_dim * n_cols];
    let mut grad = Tensor::zeros(kernel_shape);
    let in_plane = c_in * h * w;
    let g_plane = c_out * n_cols;
    for n in 0..batch {
        im2col(
            &input.data()[n * in_plane..(n + 1) * in_plane],
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
            &mut col,
        );
        // dK += g · colT
        S::gemm_strided(
            c_out,
            n_cols,
            k_dim,
            S::one(),
            &out_grad.data()[n * g_plane..(n + 1) * g_plane],
            (n_cols as isize, 1),
            &col,
            (1, n_cols as isize),
            S::one(),
            grad.data_mut(),
            (k_dim as isize, 1),
        );
    }
    Ok(grad)
}

/// Gradient of a convolution w.r.t. its per-channel bias.
pub fn conv2d_bias_grad<S: Scalar>(out_grad: &Tensor<S>) -> Tensor<S> {
    let gsh = out_grad.shape();
    let (batch, c_out, plane) = (gsh[0], gsh[1], gsh[2] * gsh[3]);
    let mut grad = Tensor::zeros(&[c_out]);
    for n in 0..batch {
        for c in 0..c_out {
            let base = (n * c_out + c) * plane;
            let mut acc = S::zero();
            for &v in &out_grad.data()[base..base + plane] {
                acc += v;
            }
            grad.data_mut()[c] += acc;
        }
    }
    grad
}

/// Transposed convolution: the exact adjoint of [`conv2d_forward`] for the
/// same kernel and hyperparameters. Input [N,Cout,H,W] with kernel
/// [Cout,Cin,kH,kW] yields [N,Cin,(H−1)s−2p+kH,(W−1)s−2p+kW].
pub fn conv_transpose2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let ish = input.shape();
    let ksh = kernel.shape();
    if ish.len() != 4 || ksh.len() != 4 {
        return Err(Error::config(format!(
            "conv_transpose2d expects rank-4 input and kernel, got {ish:?} and {ksh:?}"
        )));
    }
    if ish[1] != ksh[0] {
        return Err(Error::config(format!(
            "input has {} channels but transposed kernel expects {}",
            ish[1], ksh[0]
        )));
    }
    let oh = convt_out_dim(ish[2], ksh[2], stride, padding)?;
    let ow = convt_out_dim(ish[3], ksh[3], stride, padding)?;
    conv2d_input_grad(input, kernel, stride, padding, (oh, ow))
}

/// Gradient of [`conv_transpose2d_forward`] w.r.t. its input: the forward
/// convolution of the output gradient with the same kernel.
pub fn conv_transpose2d_input_grad<S: Scalar>(
    out_grad: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    conv2d_forward(out_grad, kernel, None, stride, padding)
}

/// Gradient of [`conv_transpose2d_forward`] w.r.t. its kernel.
pub fn conv_transpose2d_kernel_grad<S: Scalar>(
    input: &Tensor<S>,
    out_grad: &Tensor<S>,
    stride: usize,
    padding: usize,
    kernel_shape: &[usize],
) -> Result<Tensor<S>> {
    // Same contraction as the convolution kernel gradient with the roles of
    // (input, output-gradient) exchanged.
    conv2d_kernel_grad(out_grad, input, stride, padding, kernel_shape)
}
