//! Network construction and execution: U-Net generator and patch
//! discriminator built from 4×4 convolutions.
//!
//! Layer table conventions, fixed here once so every test can rely on them:
//! 4×4 kernels with padding 1 throughout, stride-2 sampling in the trunk,
//! leaky slope 0.2, channel widths `base·2^level` capped at `8·base`, layer
//! order conv → instance norm → activation, no dropout, and no learned affine
//! in the normalization.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const KERNEL: usize = 4;
pub const PADDING: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const CHANNEL_CAP_FACTOR: usize = 8;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

/// One convolutional layer of a network.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub norm: bool,
    pub act: Activation,
    pub bias: bool,
    /// Decoder-only: index of the encoder layer whose output is concatenated
    /// onto this layer's input (skip connection by channel concatenation).
    pub skip_concat: Option<usize>,
}

impl LayerSpec {
    /// Kernel tensor shape. Convolutions store [out, in, k, k]; transposed
    /// convolutions store [in, out, k, k] (the adjoint orientation).
    pub fn kernel_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::ConvTranspose => {
                vec![self.in_channels, self.out_channels, self.kernel, self.kernel]
            }
        }
    }
}

/// Layer-by-layer description of a generator or discriminator.
#[derive(Clone, Debug)]
pub struct NetworkDef {
    pub layers: Vec<LayerSpec>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of leading layers whose outputs feed skip connections.
    pub n_encoder: usize,
    /// Spatial downsampling depth; generator inputs must be divisible by 2^depth.
    pub depth: usize,
    pub norm_eps: f64,
}

fn width(base: usize, level: usize) -> usize {
    (base << level).min(CHANNEL_CAP_FACTOR * base)
}

/// Encoder-decoder generator with skip connections: `depth` stride-2 4×4
/// convolutions down, mirrored transposed convolutions up, final tanh.
pub fn build_unet_generator(
    image_size: usize,
    k_in: usize,
    k_out: usize,
    base_channels: usize,
    depth: usize,
) -> Result<NetworkDef> {
    if depth < 2 {
        return Err(Error::config(format!("generator depth {depth} must be >= 2")));
    }
    if base_channels == 0 || k_in == 0 || k_out == 0 {
        return Err(Error::config("channel counts must be positive"));
    }
    if image_size == 0 || image_size % (1 << depth) != 0 {
        return Err(Error::config(format!(
            "image size {image_size} is not divisible by 2^{depth}"
        )));
    }
    let ch: Vec<usize> = (0..depth).map(|i| width(base_channels, i)).collect();
    let mut layers = Vec::with_capacity(2 * depth);
    for i in 0..depth {
        layers.push(LayerSpec {
            name: format!("enc{i}"),
            kind: LayerKind::Conv,
            in_channels: if i == 0 { k_in } else { ch[i - 1] },
            out_channels: ch[i],
            kernel: KERNEL,
            stride: 2,
            padding: PADDING,
            norm: i > 0,
            act: Activation::LeakyRelu(LEAKY_SLOPE),
            bias: true,
            skip_concat: None,
        });
    }
    for t in 0..depth {
        let last = t == depth - 1;
        layers.push(LayerSpec {
            name: format!("dec{t}"),
            kind: LayerKind::ConvTranspose,
            in_channels: if t == 0 { ch[depth - 1] } else { 2 * ch[depth - 1 - t] },
            out_channels: if last { k_out } else { ch[depth - 2 - t] },
            kernel: KERNEL,
            stride: 2,
            padding: PADDING,
            norm: !last,
            act: if last { Activation::Tanh } else { Activation::Relu },
            bias: true,
            skip_concat: if t == 0 { None } else { Some(depth - 1 - t) },
        });
    }
    Ok(NetworkDef {
        layers,
        in_channels: k_in,
        out_channels: k_out,
        n_encoder: depth,
        depth,
        norm_eps: NORM_EPS,
    })
}

/// Patch-level discriminator: `n_layers` stride-2 4×4 convolutions, then two
/// stride-1 layers, the last emitting a 1-channel logit map (no sigmoid).
/// Conditional discriminators receive the source stacked onto the image
/// (`k_cond + k_img` input channels); unconditional ones use `k_cond = 0`.
pub fn build_patch_discriminator(
    k_cond: usize,
    k_img: usize,
    base_channels: usize,
    n_layers: usize,
) -> Result<NetworkDef> {
    if n_layers < 1 {
        return Err(Error::config(format!("discriminator n_layers {n_layers} must be >= 1")));
    }
    if k_img == 0 || base_channels == 0 {
        return Err(Error::config("channel counts must be positive"));
    }
    let in_ch = k_cond + k_img;
    let mut layers = Vec::with_capacity(n_layers + 2);
    for i in 0..n_layers {
        layers.push(LayerSpec {
            name: format!("d{i}"),
            kind: LayerKind::Conv,
            in_channels: if i == 0 { in_ch } else { width(base_channels, i - 1) },
            out_channels: width(base_channels, i),
            kernel: KERNEL,
            stride: 2,
            padding: PADDING,
            norm: i > 0,
            act: Activation::LeakyRelu(LEAKY_SLOPE),
            bias: true,
            skip_concat: None,
        });
    }
    layers.push(LayerSpec {
        name: format!("d{n_layers}"),
        kind: LayerKind::Conv,
        in_channels: width(base_channels, n_layers - 1),
        out_channels: width(base_channels, n_layers),
        kernel: KERNEL,
        stride: 1,
        padding: PADDING,
        norm: true,
        act: Activation::LeakyRelu(LEAKY_SLOPE),
        bias: true,
        skip_concat: None,
    });
    layers.push(LayerSpec {
        name: "dout".into(),
        kind: LayerKind::Conv,
        in_channels: width(base_channels, n_layers),
        out_channels: 1,
        kernel: KERNEL,
        stride: 1,
        padding: PADDING,
        norm: false,
        act: Activation::None,
        bias: true,
        skip_concat: None,
    });
    Ok(NetworkDef {
        layers,
        in_channels: in_ch,
        out_channels: 1,
        n_encoder: 0,
        depth: n_layers,
        norm_eps: NORM_EPS,
    })
}

/// Named map from layer parameter id to tensor, in deterministic layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S: Scalar = f64> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn empty() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn from_entries(entries: Vec<(String, Tensor<S>)>) -> Self {
        ParamSet { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Concatenate all parameters into one flat vector (gradient-check glue).
    pub fn flatten(&self) -> Tensor<S> {
        let mut data = Vec::with_capacity(self.total_params());
        for (_, t) in &self.entries {
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![data.len()], data).expect("flat shape")
    }

    /// Rebuild a ParamSet with this one's names/shapes from a flat vector.
    pub fn unflatten(&self, flat: &Tensor<S>) -> Result<ParamSet<S>> {
        if flat.numel() != self.total_params() {
            return Err(Error::usage(format!(
                "flat vector has {} elements, expected {}",
                flat.numel(),
                self.total_params()
            )));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut off = 0;
        for (n, t) in &self.entries {
            let numel = t.numel();
            let data = flat.data()[off..off + numel].to_vec();
            off += numel;
            entries.push((n.clone(), Tensor::new(t.shape().to_vec(), data)?));
        }
        Ok(ParamSet { entries })
    }
}

/// Parameter names and shapes a [`NetworkDef`] expects, in order.
pub fn param_layout(def: &NetworkDef) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    for layer in &def.layers {
        layout.push((format!("{}.kernel", layer.name), layer.kernel_shape()));
        if layer.bias {
            layout.push((format!("{}.bias", layer.name), vec![layer.out_channels]));
        }
    }
    layout
}

/// Fresh parameters: kernels ~ N(0, 0.02²) from the seeded generator, biases
/// zero. The same seed always yields the same ParamSet.
pub fn init_weights<S: Scalar>(def: &NetworkDef, seed: u64) -> ParamSet<S> {
    let mut rng = SeededRng::substream(seed, 0x77_65_69_67_68_74);
    let mut entries = Vec::new();
    for (name, shape) in param_layout(def) {
        let tensor = if name.ends_with(".kernel") {
            Tensor::from_fn(&shape, |_| S::of_f64(INIT_STD * rng.normal()))
        } else {
            Tensor::zeros(&shape)
        };
        entries.push((name, tensor));
    }
    ParamSet { entries }
}

/// Parameters staged onto a tape for one forward/backward pass.
pub struct StagedParams {
    vars: Vec<(String, Var)>,
}

impl StagedParams {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Record every parameter tensor as a tape leaf.
pub fn stage_params<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    requires_grad: bool,
) -> StagedParams {
    let vars = params
        .entries
        .iter()
        .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), requires_grad)))
        .collect();
    StagedParams { vars }
}

fn layer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &LayerSpec,
    staged: &StagedParams,
    input: Var,
    eps: S,
) -> Result<Var> {
    let kernel = staged
        .var(&format!("{}.kernel", layer.name))
        .ok_or_else(|| Error::usage(format!("missing parameter {}.kernel", layer.name)))?;
    let bias = if layer.bias {
        Some(
            staged
                .var(&format!("{}.bias", layer.name))
                .ok_or_else(|| Error::usage(format!("missing parameter {}.bias", layer.name)))?,
        )
    } else {
        None
    };
    let mut y = match layer.kind {
        LayerKind::Conv => tape.conv2d(input, kernel, bias, layer.stride, layer.padding)?,
        LayerKind::ConvTranspose => {
            let out = tape.conv_transpose2d(input, kernel, layer.stride, layer.padding)?;
            match bias {
                Some(b) => tape.bias_add(out, b)?,
                None => out,
            }
        }
    };
    if layer.norm {
        y = tape.instance_norm(y, eps)?;
    }
    y = match layer.act {
        Activation::None => y,
        Activation::Relu => tape.relu(y),
        Activation::LeakyRelu(s) => tape.leaky_relu(y, S::of_f64(s))?,
        Activation::Tanh => tape.tanh(y),
    };
    Ok(y)
}

/// Run a network on the tape. Encoder outputs are cached for the generator's
/// skip concatenations; discriminators simply chain layers.
pub fn network_forward<S: Scalar>(
    tape: &mut Tape<S>,
    def: &NetworkDef,
    staged: &StagedParams,
    input: Var,
) -> Result<Var> {
    let ish = tape.value(input).shape().to_vec();
    if ish.len() != 4 || ish[1] != def.in_channels {
        return Err(Error::usage(format!(
            "network expects [N,{},H,W] input, got {ish:?}",
            def.in_channels
        )));
    }
    if def.n_encoder > 0 {
        // generator: spatial size must survive the full down/up round trip
        if ish[2] != ish[3] || ish[2] % (1 << def.depth) != 0 {
            return Err(Error::usage(format!(
                "generator input {}x{} must be square and divisible by 2^{}",
                ish[2], ish[3], def.depth
            )));
        }
    }
    let eps = S::of_f64(def.norm_eps);
    let mut encoder_out: Vec<Var> = Vec::with_capacity(def.n_encoder);
    let mut x = input;
    for (idx, layer) in def.layers.iter().enumerate() {
        let layer_in = match layer.skip_concat {
            Some(enc) => tape.concat(&[x, encoder_out[enc]], 1)?,
            None => x,
        };
        x = layer_forward(tape, layer, staged, layer_in, eps)?;
        if idx < def.n_encoder {
            encoder_out.push(x);
        }
    }
    Ok(x)
}

/// Convenience inference entry point: forward on a private tape, no gradients.
pub fn infer<S: Scalar>(def: &NetworkDef, params: &ParamSet<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params, false);
    let x = tape.constant(input.clone());
    let y = network_forward(&mut tape, def, &staged, x)?;
    Ok(tape.value(y).clone())
}

/// Spatial size of the discriminator's logit map for a square input.
pub fn discriminator_map_size(def: &NetworkDef, input_size: usize) -> Result<usize> {
    let mut s = input_size;
    for layer in &def.layers {
        s = crate::conv::conv_out_dim(s, layer.kernel, layer.stride, layer.padding)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_preserves_spatial_size() {
        let def = build_unet_generator(64, 1, 1, 16, 4).unwrap();
        let params = init_weights::<f64>(&def, 7);
        let x = Tensor::from_fn(&[1, 1, 64, 64], |i| ((i % 13) as f64 - 6.0) / 6.0);
        let y = infer(&def, &params, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64]);
    }

    #[test]
    fn generator_output_strictly_inside_tanh_range() {
        let def = build_unet_generator(16, 1, 1, 4, 2).unwrap();
        let params = init_weights::<f64>(&def, 3);
        let x = Tensor::from_fn(&[2, 1, 16, 16], |i| (i as f64 * 0.718).sin());
        let y = infer(&def, &params, &x).unwrap();
        assert!(y.data().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn multi_slice_input_channels() {
        let def = build_unet_generator(64, 3, 1, 16, 4).unwrap();
        assert_eq!(def.layers[0].in_channels, 3);
        assert_eq!(param_layout(&def)[0].1, vec![16, 3, 4, 4]);
    }

    #[test]
    fn indivisible_image_size_rejected() {
        assert!(matches!(build_unet_generator(60, 1, 1, 16, 4), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_matches_counting_oracle() {
        // independent count: sum over the documented layer table
        let (base, depth, k_in, k_out) = (16usize, 4usize, 1usize, 1usize);
        let ch: Vec<usize> = (0..depth).map(|i| (base << i).min(8 * base)).collect();
        let mut expect = 0usize;
        for i in 0..depth {
            let cin = if i == 0 { k_in } else { ch[i - 1] };
            expect += ch[i] * cin * 16 + ch[i];
        }
        for t in 0..depth {
            let cin = if t == 0 { ch[depth - 1] } else { 2 * ch[depth - 1 - t] };
            let cout = if t == depth - 1 { k_out } else { ch[depth - 2 - t] };
            expect += cin * cout * 16 + cout;
        }
        let def = build_unet_generator(64, k_in, k_out, base, depth).unwrap();
        let params = init_weights::<f64>(&def, 1);
        assert_eq!(params.total_params(), expect);
        // frozen regression value for the default desk-scale generator
        assert_eq!(expect, 386_145);
    }

    #[test]
    fn discriminator_parameter_count_frozen() {
        let def = build_patch_discriminator(1, 1, 16, 3).unwrap();
        let params = init_weights::<f64>(&def, 1);
        // counting oracle over the stride table: 2->16->32->64->128->1
        let mut expect = 0usize;
        for (cin, cout) in [(2usize, 16usize), (16, 32), (32, 64), (64, 128), (128, 1)] {
            expect += cout * cin * 16 + cout;
        }
        assert_eq!(params.total_params(), expect);
        assert_eq!(expect, 174_833);
    }

    #[test]
    fn discriminator_channel_modes() {
        // conditional (source, target) pair vs unconditional
        let pgan_d = build_patch_discriminator(3, 1, 16, 3).unwrap();
        assert_eq!(pgan_d.in_channels, 4);
        let cgan_d = build_patch_discriminator(0, 1, 16, 3).unwrap();
        assert_eq!(cgan_d.in_channels, 1);
    }

    #[test]
    fn discriminator_map_size_fixture() {
        // 64x64 input with 3 stride-2 layers then two stride-1 layers -> 6x6
        let def = build_patch_discriminator(1, 1, 16, 3).unwrap();
        assert_eq!(discriminator_map_size(&def, 64).unwrap(), 6);
        let params = init_weights::<f64>(&def, 5);
        let x = Tensor::from_fn(&[1, 2, 64, 64], |i| ((i * 7) % 11) as f64 / 11.0);
        let y = infer(&def, &params, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
    }

    #[test]
    fn init_statistics() {
        let def = build_unet_generator(64, 1, 1, 16, 4).unwrap();
        let params = init_weights::<f64>(&def, 42);
        let mut vals = Vec::new();
        for (name, t) in params.iter() {
            if name.ends_with(".kernel") {
                vals.extend_from_slice(t.data());
            } else {
                assert!(t.data().iter().all(|&b| b == 0.0), "bias {name} not zero");
            }
        }
        let n = vals.len() as f64;
        assert!(n >= 1e4);
        let mean: f64 = vals.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * INIT_STD / n.sqrt(), "mean {mean}");
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!((std - INIT_STD).abs() < 0.05 * INIT_STD, "std {std}");
    }

    #[test]
    fn same_seed_same_params() {
        let def = build_unet_generator(16, 1, 1, 4, 2).unwrap();
        let a = init_weights::<f64>(&def, 9);
        let b = init_weights::<f64>(&def, 9);
        assert_eq!(a, b);
        let c = init_weights::<f64>(&def, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let def = build_unet_generator(16, 1, 1, 4, 2).unwrap();
        let layout = param_layout(&def);
        let params = ParamSet::from_entries(
            layout.into_iter().map(|(n, sh)| (n, Tensor::<f64>::zeros(&sh))).collect(),
        );
        let x = Tensor::from_fn(&[1, 1, 16, 16], |i| (i as f64).cos());
        let y = infer(&def, &params, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_equals_per_sample() {
        let def = build_unet_generator(16, 1, 1, 8, 2).unwrap();
        let params = init_weights::<f64>(&def, 21);
        let a = Tensor::from_fn(&[1, 1, 16, 16], |i| ((i as f64) * 0.37).sin());
        let b = Tensor::from_fn(&[1, 1, 16, 16], |i| ((i as f64) * 0.11).cos());
        let mut batched = Tensor::zeros(&[2, 1, 16, 16]);
        batched.data_mut()[..256].copy_from_slice(a.data());
        batched.data_mut()[256..].copy_from_slice(b.data());
        let yb = infer(&def, &params, &batched).unwrap();
        let ya = infer(&def, &params, &a).unwrap();
        let yb2 = infer(&def, &params, &b).unwrap();
        assert_eq!(&yb.data()[..256], ya.data());
        assert_eq!(&yb.data()[256..], yb2.data());
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let def = build_patch_discriminator(0, 1, 8, 2).unwrap();
        let params = init_weights::<f64>(&def, 33);
        let a = Tensor::from_fn(&[1, 1, 32, 32], |i| ((i as f64) * 0.21).sin());
        let b = Tensor::from_fn(&[1, 1, 32, 32], |i| ((i as f64) * 0.57).cos());
        let stack = |x: &Tensor<f64>, y: &Tensor<f64>| {
            let mut t = Tensor::zeros(&[2, 1, 32, 32]);
            t.data_mut()[..1024].copy_from_slice(x.data());
            t.data_mut()[1024..].copy_from_slice(y.data());
            t
        };
        let fwd = infer(&def, &params, &stack(&a, &b)).unwrap();
        let rev = infer(&def, &params, &stack(&b, &a)).unwrap();
        let plane = fwd.numel() / 2;
        assert_eq!(&fwd.data()[..plane], &rev.data()[plane..]);
        assert_eq!(&fwd.data()[plane..], &rev.data()[..plane]);
    }

    #[test]
    fn wrong_input_channels_is_usage_error() {
        let def = build_unet_generator(16, 3, 1, 4, 2).unwrap();
        let params = init_weights::<f64>(&def, 2);
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(infer(&def, &params, &x), Err(Error::Usage(_))));
    }
}
