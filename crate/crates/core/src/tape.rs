//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive operation in execution order, which is a
//! valid topological order of the computation graph by construction. Forward
//! values are computed eagerly; [`Tape::backward`] replays the record once in
//! reverse, accumulating gradients into the nodes that require them.
//!
//! Lifecycle contract: one tape per optimization step. `backward` zeroes all
//! gradient buffers before seeding, so repeated calls on the same tape are
//! independent, and values are immutable once recorded.

use crate::conv;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

/// Handle to a recorded tensor on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Abs(Var),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Mean(Var),
    Concat(Vec<Var>, usize),
    PadZero(Var, Vec<(usize, usize)>),
    BceWithLogits(Var, Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize },
    ConvTranspose2d { input: Var, kernel: Var, stride: usize, padding: usize },
    // inv_std saved per (batch, channel) plane for the backward pass
    InstanceNorm { input: Var, inv_std: Vec<S> },
    BiasAdd { input: Var, bias: Var },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Recorded computation graph over [`Tensor`] values.
pub struct Tape<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Record an input tensor. Gradients are accumulated for it iff
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Copy a recorded value back out as a fresh constant, cutting the
    /// gradient path (the two-player update uses this for fake samples).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf (or any node) after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradient of `v`, treating "never touched" as zero.
    pub fn grad_or_zero(&self, v: Var) -> Tensor<S> {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::usage(format!(
                "{name}: shape mismatch {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply by a compile-time constant (loss weights, sign flips).
    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        if slope < S::zero() || slope >= S::one() {
            return Err(Error::usage(format!("leaky_relu slope {slope} outside [0,1)")));
        }
        Ok(self.unary(a, |x| if x > S::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope)))
    }

    /// Mean over all elements, as a 1-element tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let n = S::of_f64(v.numel() as f64);
        let total: S = v.data().iter().copied().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(total / n), Op::Mean(a), rg)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::usage("concat of zero tensors"));
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::config(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0usize;
        for &x in xs {
            let sh = self.nodes[x.0].value.shape();
            if sh.len() != first.len()
                || sh.iter().enumerate().any(|(d, &s)| d != axis && s != first[d])
            {
                return Err(Error::usage(format!(
                    "concat: incompatible shapes {:?} vs {:?} on axis {axis}",
                    first, sh
                )));
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![S::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            let len = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * len * inner..(o + 1) * len * inner];
                let dst_base = (o * axis_total + offset) * inner;
                data[dst_base..dst_base + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        let rg = xs.iter().any(|&x| self.nodes[x.0].requires_grad);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Zero-pad along every axis; `pads[d] = (before, after)`.
    pub fn pad_zero(&mut self, a: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let value = self.nodes[a.0].value.pad_zero(pads)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::PadZero(a, pads.to_vec()), rg))
    }

    /// Numerically stable fused `-[t·log σ(l) + (1-t)·log(1-σ(l))]`, elementwise.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Var) -> Result<Var> {
        self.binary_same_shape(
            logits,
            labels,
            "bce_with_logits",
            |l, t| {
                let zero = S::zero();
                let pos = if l > zero { l } else { zero };
                pos - l * t + (S::one() + (-l.abs()).exp()).ln()
            },
            Op::BceWithLogits(logits, labels),
        )
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = conv::conv2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            bias.map(|b| &self.nodes[b.0].value),
            stride,
            padding,
        )?;
        let rg = self.nodes[input.0].requires_grad
            || self.nodes[kernel.0].requires_grad
            || bias.is_some_and(|b| self.nodes[b.0].requires_grad);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride, padding }, rg))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = conv::conv_transpose2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            stride,
            padding,
        )?;
        let rg = self.nodes[input.0].requires_grad || self.nodes[kernel.0].requires_grad;
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, stride, padding }, rg))
    }

    /// Per-sample, per-channel standardization over the spatial plane with
    /// population variance and no learned affine.
    pub fn instance_norm(&mut self, input: Var, eps: S) -> Result<Var> {
        if eps <= S::zero() {
            return Err(Error::usage("instance_norm eps must be > 0"));
        }
        let v = &self.nodes[input.0].value;
        let sh = v.shape();
        if sh.len() != 4 {
            return Err(Error::usage(format!("instance_norm expects [N,C,H,W], got {sh:?}")));
        }
        let (n_b, c_n, plane) = (sh[0], sh[1], sh[2] * sh[3]);
        let m = S::of_f64(plane as f64);
        let mut data = vec![S::zero(); v.numel()];
        let mut inv_std = Vec::with_capacity(n_b * c_n);
        for nc in 0..n_b * c_n {
            let src = &v.data()[nc * plane..(nc + 1) * plane];
            let mean = src.iter().copied().sum::<S>() / m;
            let var = src.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / m;
            let istd = S::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (dst, &x) in data[nc * plane..(nc + 1) * plane].iter_mut().zip(src) {
                *dst = (x - mean) * istd;
            }
        }
        let value = Tensor::new(sh.to_vec(), data)?;
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(value, Op::InstanceNorm { input, inv_std }, rg))
    }

    /// Broadcast-add a per-channel bias [C] onto [N,C,H,W].
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var> {
        let v = &self.nodes[input.0].value;
        let b = &self.nodes[bias.0].value;
        let sh = v.shape();
        if sh.len() != 4 || b.shape() != [sh[1]] {
            return Err(Error::usage(format!(
                "bias_add: input {sh:?} incompatible with bias {:?}",
                b.shape()
            )));
        }
        let (n_b, c_n, plane) = (sh[0], sh[1], sh[2] * sh[3]);
        let mut data = v.data().to_vec();
        for n in 0..n_b {
            for c in 0..c_n {
                let bv = b.data()[c];
                for x in &mut data[(n * c_n + c) * plane..(n * c_n + c + 1) * plane] {
                    *x += bv;
                }
            }
        }
        let value = Tensor::new(sh.to_vec(), data)?;
        let rg = self.nodes[input.0].requires_grad || self.nodes[bias.0].requires_grad;
        Ok(self.push(value, Op::BiasAdd { input, bias }, rg))
    }

    /// Smallest distance of any recorded kinked activation (relu, leaky relu,
    /// abs) input to its kink. Infinite when none are recorded; used by
    /// gradient checks to certify a smooth evaluation point.
    pub fn kink_margin(&self) -> S {
        let mut margin = S::infinity();
        for node in &self.nodes {
            let input = match node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Abs(a) => a,
                _ => continue,
            };
            for &x in self.nodes[input.0].value.data() {
                margin = margin.min(x.abs());
            }
        }
        margin
    }

    /// Side of the kink for every kinked-activation input, in recording
    /// order. Two evaluations of the same graph with identical signatures
    /// crossed no kink between them, so the segment is smooth.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            let input = match node.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Abs(a) => a,
                _ => continue,
            };
            signs.extend(self.nodes[input.0].value.data().iter().map(|x| *x > S::zero()));
        }
        signs
    }

    /// Reverse sweep from a scalar loss. Gradients of all reachable
    /// `requires_grad` nodes are (re)computed from zero.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::usage(format!(
                "backward on non-scalar of shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = node.grad.as_ref().expect("checked above");
            backprop_node(before, node, g)?;
        }
        Ok(())
    }
}

/// Ensure a gradient buffer exists on `nodes[v]` and return it.
fn grad_buf<'a, S: Scalar>(nodes: &'a mut [Node<S>], v: Var) -> &'a mut [S] {
    let node = &mut nodes[v.0];
    if node.grad.is_none() {
        node.grad = Some(vec![S::zero(); node.value.numel()]);
    }
    node.grad.as_mut().expect("just created")
}

fn accumulate<S: Scalar>(nodes: &mut [Node<S>], v: Var, delta: &[S]) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grad_buf(nodes, v);
    debug_assert_eq!(buf.len(), delta.len());
    for (b, &d) in buf.iter_mut().zip(delta) {
        *b += d;
    }
}

fn accumulate_fn<S: Scalar>(nodes: &mut [Node<S>], v: Var, mut f: impl FnMut(usize) -> S) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grad_buf(nodes, v);
    for (i, b) in buf.iter_mut().enumerate() {
        *b += f(i);
    }
}

fn backprop_node<S: Scalar>(before: &mut [Node<S>], node: &Node<S>, g: &[S]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(before, *a, g);
            accumulate(before, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(before, *a, g);
            accumulate_fn(before, *b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            {
                let bv: Vec<S> = before[b.0].value.data().to_vec();
                accumulate_fn(before, a, |i| g[i] * bv[i]);
            }
            let av: Vec<S> = before[a.0].value.data().to_vec();
            accumulate_fn(before, b, |i| g[i] * av[i]);
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate_fn(before, *a, |i| g[i] * c);
        }
        Op::Abs(a) => {
            let a = *a;
            let xv: Vec<S> = before[a.0].value.data().to_vec();
            // subgradient |.|'(0) = 0
            accumulate_fn(before, a, |i| {
                if xv[i] > S::zero() {
                    g[i]
                } else if xv[i] < S::zero() {
                    -g[i]
                } else {
                    S::zero()
                }
            });
        }
        Op::Square(a) => {
            let a = *a;
            let xv: Vec<S> = before[a.0].value.data().to_vec();
            let two = S::of_f64(2.0);
            accumulate_fn(before, a, |i| g[i] * two * xv[i]);
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            accumulate_fn(before, *a, |i| g[i] * (S::one() - y[i] * y[i]));
        }
        Op::Relu(a) => {
            let a = *a;
            let xv: Vec<S> = before[a.0].value.data().to_vec();
            // subgradient relu'(0) = 0
            accumulate_fn(before, a, |i| if xv[i] > S::zero() { g[i] } else { S::zero() });
        }
        Op::LeakyRelu(a, slope) => {
            let (a, slope) = (*a, *slope);
            let xv: Vec<S> = before[a.0].value.data().to_vec();
            // subgradient leaky'(0) = slope
            accumulate_fn(before, a, |i| if xv[i] > S::zero() { g[i] } else { g[i] * slope });
        }
        Op::Mean(a) => {
            let n = S::of_f64(before[a.0].value.numel() as f64);
            let gv = g[0] / n;
            accumulate_fn(before, *a, |_| gv);
        }
        Op::Concat(xs, axis) => {
            let out_shape = node.value.shape();
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[*axis + 1..].iter().product();
            let axis_total = out_shape[*axis];
            let mut offset = 0usize;
            for &x in xs {
                let len = before[x.0].value.shape()[*axis];
                if before[x.0].requires_grad {
                    let mut delta = vec![S::zero(); before[x.0].value.numel()];
                    for o in 0..outer {
                        let src = (o * axis_total + offset) * inner;
                        let dst = o * len * inner;
                        delta[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    accumulate(before, x, &delta);
                }
                offset += len;
            }
        }
        Op::PadZero(a, pads) => {
            let a = *a;
            let in_shape = before[a.0].value.shape().to_vec();
            let out_strides = strides(node.value.shape());
            let in_strides = strides(&in_shape);
            let mut delta = vec![S::zero(); before[a.0].value.numel()];
            for (lin, d) in delta.iter_mut().enumerate() {
                let mut rem = lin;
                let mut out_lin = 0;
                for dim in 0..in_shape.len() {
                    let idx = rem / in_strides[dim];
                    rem %= in_strides[dim];
                    out_lin += (idx + pads[dim].0) * out_strides[dim];
                }
                *d = g[out_lin];
            }
            accumulate(before, a, &delta);
        }
        Op::BceWithLogits(logits, labels) => {
            let (logits, labels) = (*logits, *labels);
            let lv: Vec<S> = before[logits.0].value.data().to_vec();
            let tv: Vec<S> = before[labels.0].value.data().to_vec();
            // dL/dl = sigma(l) - t
            accumulate_fn(before, logits, |i| {
                let sig = S::one() / (S::one() + (-lv[i]).exp());
                g[i] * (sig - tv[i])
            });
            // dL/dt = -l
            accumulate_fn(before, labels, |i| -g[i] * lv[i]);
        }
        Op::Conv2d { input, kernel, bias, stride, padding } => {
            let g_t = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
            let kernel_t = before[kernel.0].value.clone();
            let input_t = before[input.0].value.clone();
            if before[input.0].requires_grad {
                let ish = input_t.shape();
                let d = conv::conv2d_input_grad(&g_t, &kernel_t, *stride, *padding, (ish[2], ish[3]))?;
                accumulate(before, *input, d.data());
            }
            if before[kernel.0].requires_grad {
                let d = conv::conv2d_kernel_grad(&input_t, &g_t, *stride, *padding, kernel_t.shape())?;
                accumulate(before, *kernel, d.data());
            }
            if let Some(b) = bias {
                if before[b.0].requires_grad {
                    let d = conv::conv2d_bias_grad(&g_t);
                    accumulate(before, *b, d.data());
                }
            }
        }
        Op::ConvTranspose2d { input, kernel, stride, padding } => {
            let g_t = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
            let kernel_t = before[kernel.0].value.clone();
            let input_t = before[input.0].value.clone();
            if before[input.0].requires_grad {
                let d = conv::conv_transpose2d_input_grad(&g_t, &kernel_t, *stride, *padding)?;
                accumulate(before, *input, d.data());
            }
            if before[kernel.0].requires_grad {
                let d = conv::conv_transpose2d_kernel_grad(&input_t, &g_t, *stride, *padding, kernel_t.shape())?;
                accumulate(before, *kernel, d.data());
            }
        }
        Op::InstanceNorm { input, inv_std } => {
            let input = *input;
            if !before[input.0].requires_grad {
                return Ok(());
            }
            let y = node.value.data();
            let sh = node.value.shape();
            let plane = sh[2] * sh[3];
            let m = S::of_f64(plane as f64);
            let mut delta = vec![S::zero(); y.len()];
            for (nc, &istd) in inv_std.iter().enumerate() {
                let base = nc * plane;
                let gp = &g[base..base + plane];
                let yp = &y[base..base + plane];
                let g_mean = gp.iter().copied().sum::<S>() / m;
                let gy_mean = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<S>() / m;
                for j in 0..plane {
                    delta[base + j] = istd * (gp[j] - g_mean - yp[j] * gy_mean);
                }
            }
            accumulate(before, input, &delta);
        }
        Op::BiasAdd { input, bias } => {
            accumulate(before, *input, g);
            if before[bias.0].requires_grad {
                let sh = node.value.shape();
                let (n_b, c_n, plane) = (sh[0], sh[1], sh[2] * sh[3]);
                let mut delta = vec![S::zero(); c_n];
                for n in 0..n_b {
                    for (c, d) in delta.iter_mut().enumerate() {
                        let base = (n * c_n + c) * plane;
                        for &gv in &g[base..base + plane] {
                            *d += gv;
                        }
                    }
                }
                accumulate(before, *bias, &delta);
            }
        }
    }
    Ok(())
}
