//! U-Net regressor.
//!
//! Each encoder level is two 3×3 conv+ReLU followed by 2×2 max pooling; the
//! bottleneck is two more 3×3 conv+ReLU. Each decoder level upsamples 2×
//! (nearest), applies a 3×3 conv+ReLU that halves the channels, concatenates
//! the encoder skip, then two 3×3 conv+ReLU. A 1×1 conv and a sigmoid give
//! one output channel in (0, 1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    concat_channels, maxpool2, maxpool2_backward, relu_backward_in_place, relu_in_place, sigmoid, split_channels,
    upsample2, upsample2_backward, Conv2d,
};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Number of pooling steps.
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UNetConfig {
    /// RGB-NIR in, one height band out.
    pub fn new(depth: usize, base_channels: usize) -> Self {
        Self {
            depth,
            base_channels,
            in_channels: 4,
            out_channels: 1,
        }
    }

    /// Full-size network: four poolings, 64 channels at the first level.
    pub fn full_scale() -> Self {
        Self::new(4, 64)
    }

    /// Channels at encoder level `l`; level `depth` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Invalid(format!("degenerate network config {self:?}")));
        }
        if self.depth > 12 {
            return Err(Error::Invalid(format!("depth {} is unreasonably large", self.depth)));
        }
        Ok(())
    }

    pub fn check_input(&self, rows: usize, cols: usize) -> Result<()> {
        let m = self.size_multiple();
        if !rows.is_multiple_of(m) || !cols.is_multiple_of(m) || rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "input {rows}x{cols} must be a non-zero multiple of {m} for depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Upper bound, in input pixels, on how far an output pixel can see.
    /// A mirrored border at least this wide keeps the zero padding of the
    /// convolutions from reaching the cropped interior.
    pub fn receptive_radius(&self) -> usize {
        let d = self.depth;
        // encoder: two convs and a pool per level; decoder: upsample, up
        // conv and two convs per level; the bottleneck has two convs
        let enc: usize = (0..d).map(|l| 3 << l).sum();
        let dec: usize = (0..d).map(|l| 4 << l).sum();
        enc + (2 << d) + dec
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
        let d = self.depth;
        let mut total = 0;
        for l in 0..d {
            let cin = if l == 0 { self.in_channels } else { self.channels(l - 1) };
            total += conv(cin, self.channels(l), 3) + conv(self.channels(l), self.channels(l), 3);
        }
        total += conv(self.channels(d - 1), self.channels(d), 3) + conv(self.channels(d), self.channels(d), 3);
        for l in 0..d {
            let c = self.channels(l);
            total += conv(self.channels(l + 1), c, 3) + conv(2 * c, c, 3) + conv(c, c, 3);
        }
        total + conv(self.base_channels, self.out_channels, 1)
    }
}

/// Deliberate fault in the backward pass, used to show that gradient
/// checking catches broken derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    /// Negate the weight gradient of one convolution.
    FlipWeightSign { layer: usize },
}

/// Per-convolution weight and bias gradients, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &UNet<T>) -> Self {
        Self {
            weight: model.convs.iter().map(|c| vec![T::ZERO; c.weight.len()]).collect(),
            bias: model.convs.iter().map(|c| vec![T::ZERO; c.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    /// Flattened views in parameter order (weight, bias per layer).
    pub fn tensors(&self) -> Vec<&[T]> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Option<Tensor<T>>>,
    outputs: Vec<Option<Tensor<T>>>,
    argmax: Vec<Vec<u32>>,
    pool_shapes: Vec<[usize; 4]>,
}

impl<T: Scalar> ForwardCache<T> {
    fn new(layers: usize, depth: usize) -> Self {
        Self {
            inputs: vec![None; layers],
            outputs: vec![None; layers],
            argmax: vec![Vec::new(); depth],
            pool_shapes: vec![[0; 4]; depth],
        }
    }

    /// Output of the final layer (after the sigmoid).
    pub fn prediction(&self) -> &Tensor<T> {
        self.outputs.last().and_then(|o| o.as_ref()).expect("forward pass ran")
    }

    /// Activation sign pattern and pooling choices; two passes with equal
    /// patterns lie on the same smooth piece of the network function.
    pub fn pattern(&self) -> Vec<u64> {
        let mut bits = Vec::new();
        let mut word = 0u64;
        let mut n = 0;
        let mut push = |b: bool, bits: &mut Vec<u64>| {
            word |= (b as u64) << n;
            n += 1;
            if n == 64 {
                bits.push(word);
                word = 0;
                n = 0;
            }
        };
        for out in self.outputs.iter().flatten() {
            for &v in out.data() {
                push(v > T::ZERO, &mut bits);
            }
        }
        bits.push(word);
        for a in &self.argmax {
            bits.extend(a.iter().map(|&i| i as u64));
        }
        bits
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: UNetConfig,
    convs: Vec<Conv2d<T>>,
}

impl<T: Scalar> UNet<T> {
    /// Network with all parameters zero.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        let mut convs = Vec::with_capacity(5 * d + 3);
        for l in 0..d {
            let cin = if l == 0 {
                config.in_channels
            } else {
                config.channels(l - 1)
            };
            convs.push(Conv2d::new(format!("enc{l}.conv1"), cin, config.channels(l), 3));
            convs.push(Conv2d::new(
                format!("enc{l}.conv2"),
                config.channels(l),
                config.channels(l),
                3,
            ));
        }
        convs.push(Conv2d::new("mid.conv1", config.channels(d - 1), config.channels(d), 3));
        convs.push(Conv2d::new("mid.conv2", config.channels(d), config.channels(d), 3));
        for l in (0..d).rev() {
            let c = config.channels(l);
            convs.push(Conv2d::new(format!("up{l}.conv"), config.channels(l + 1), c, 3));
            convs.push(Conv2d::new(format!("dec{l}.conv1"), 2 * c, c, 3));
            convs.push(Conv2d::new(format!("dec{l}.conv2"), c, c, 3));
        }
        convs.push(Conv2d::new("head.conv", config.base_channels, config.out_channels, 1));
        Ok(Self { config, convs })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in &mut model.convs {
            let fan_in = (conv.in_ch * conv.kernel * conv.kernel) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut conv.weight {
                *w = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.convs
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2d<T>] {
        &mut self.convs
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    /// `(name, values)` for every parameter tensor in a stable order.
    pub fn named_params(&self) -> Vec<(String, &[T])> {
        self.convs
            .iter()
            .flat_map(|c| {
                [
                    (format!("{}.weight", c.name), c.weight.as_slice()),
                    (format!("{}.bias", c.name), c.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            name: c.name.clone(),
            in_ch: c.in_ch,
            out_ch: c.out_ch,
            kernel: c.kernel,
            weight: c.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            bias: c.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        };
        UNet {
            config: self.config,
            convs: self.convs.iter().map(conv).collect(),
        }
    }

    fn enc(&self, l: usize) -> usize {
        2 * l
    }
    fn mid(&self) -> usize {
        2 * self.config.depth
    }
    fn up(&self, l: usize) -> usize {
        2 * self.config.depth + 2 + 3 * (self.config.depth - 1 - l)
    }
    fn head(&self) -> usize {
        self.convs.len() - 1
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        self.config.check_input(x.rows(), x.cols())
    }

    /// Inference forward pass; output `(batch, out_channels, rows, cols)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        self.run(x.clone(), None)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check(x)?;
        let mut cache = ForwardCache::new(self.convs.len(), self.config.depth);
        self.run(x.clone(), Some(&mut cache))?;
        Ok(cache)
    }

    fn apply(
        &self,
        i: usize,
        input: Tensor<T>,
        act: Activation,
        cache: &mut Option<&mut ForwardCache<T>>,
    ) -> Result<Tensor<T>> {
        let mut out = self.convs[i].forward(&input)?;
        match act {
            Activation::Relu => relu_in_place(&mut out),
            Activation::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        if let Some(c) = cache.as_deref_mut() {
            c.inputs[i] = Some(input);
            c.outputs[i] = Some(out.clone());
        }
        Ok(out)
    }

    fn run(&self, x: Tensor<T>, mut cache: Option<&mut ForwardCache<T>>) -> Result<Tensor<T>> {
        use Activation::*;
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x;
        for l in 0..d {
            h = self.apply(self.enc(l), h, Relu, &mut cache)?;
            h = self.apply(self.enc(l) + 1, h, Relu, &mut cache)?;
            let (pooled, argmax) = maxpool2(&h)?;
            if let Some(c) = cache.as_deref_mut() {
                c.argmax[l] = argmax;
                c.pool_shapes[l] = h.shape();
            }
            skips.push(h);
            h = pooled;
        }
        h = self.apply(self.mid(), h, Relu, &mut cache)?;
        h = self.apply(self.mid() + 1, h, Relu, &mut cache)?;
        for l in (0..d).rev() {
            let u = self.apply(self.up(l), upsample2(&h), Relu, &mut cache)?;
            let cat = concat_channels(&skips[l], &u)?;
            h = self.apply(self.up(l) + 1, cat, Relu, &mut cache)?;
            h = self.apply(self.up(l) + 2, h, Relu, &mut cache)?;
        }
        self.apply(self.head(), h, Sigmoid, &mut cache)
    }

    /// Parameter gradients given the loss gradient with respect to the
    /// network output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
        self.backward_with_fault(cache, grad_output, None)
    }

    pub fn backward_with_fault(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &Tensor<T>,
        fault: Option<BackwardFault>,
    ) -> Result<Gradients<T>> {
        let d = self.config.depth;
        let mut grads = Gradients::zeros_like(self);
        let out = |i: usize| cache.outputs[i].as_ref().expect("cached output");

        // Backprop through conv `i` whose output gradient is `g` (already
        // multiplied by the activation derivative).
        let mut conv_back = |i: usize, g: &Tensor<T>, need_x: bool| -> Result<Option<Tensor<T>>> {
            let input = cache.inputs[i].as_ref().expect("cached input");
            let cg = self.convs[i].backward(input, g, need_x)?;
            grads.weight[i] = cg.grad_w;
            grads.bias[i] = cg.grad_b;
            if fault == Some(BackwardFault::FlipWeightSign { layer: i }) {
                grads.weight[i].iter_mut().for_each(|v| *v = -*v);
            }
            Ok(cg.grad_x)
        };
        let relu_grad = |mut g: Tensor<T>, i: usize| {
            relu_backward_in_place(&mut g, out(i));
            g
        };

        let p = out(self.head());
        let mut g = grad_output.clone();
        for (gv, &pv) in g.data_mut().iter_mut().zip(p.data()) {
            *gv *= pv * (T::ONE - pv);
        }
        let mut gh = conv_back(self.head(), &g, true)?.expect("grad_x");

        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; d];
        #[allow(clippy::needless_range_loop)]
        for l in 0..d {
            let (up, da, db) = (self.up(l), self.up(l) + 1, self.up(l) + 2);
            let g = conv_back(db, &relu_grad(gh, db), true)?.expect("grad_x");
            let gcat = conv_back(da, &relu_grad(g, da), true)?.expect("grad_x");
            let (gskip, gu) = split_channels(&gcat, self.config.channels(l));
            skip_grads[l] = Some(gskip);
            let gup = conv_back(up, &relu_grad(gu, up), true)?.expect("grad_x");
            gh = upsample2_backward(&gup);
        }

        let g = conv_back(self.mid() + 1, &relu_grad(gh, self.mid() + 1), true)?.expect("grad_x");
        let mut gpool = conv_back(self.mid(), &relu_grad(g, self.mid()), true)?.expect("grad_x");

        for l in (0..d).rev() {
            let mut g = maxpool2_backward(&gpool, &cache.argmax[l], cache.pool_shapes[l]);
            if let Some(s) = skip_grads[l].take() {
                g.data_mut().iter_mut().zip(s.data()).for_each(|(a, b)| *a += *b);
            }
            let (a, b) = (self.enc(l), self.enc(l) + 1);
            let g = conv_back(b, &relu_grad(g, b), true)?.expect("grad_x");
            match conv_back(a, &relu_grad(g, a), l > 0)? {
                Some(gx) => gpool = gx,
                None => break,
            }
        }
        Ok(grads)
    }
}
