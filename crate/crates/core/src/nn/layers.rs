//! Layer primitives with hand-written backward passes.
//!
//! Convolutions are same-padded, stride 1, cross-correlation, evaluated as
//! im2col followed by a GEMM. The im2col buffer is built in row strips so
//! large tiles do not need a full `C·k²×H·W` matrix at once.

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements per strip.
const STRIP_ELEMS: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `[out_ch][in_ch][kernel][kernel]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of one convolution for a batch.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for same padding");
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            weight: vec![T::ZERO; out_ch * in_ch * kernel * kernel],
            bias: vec![T::ZERO; out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::shape(format!(
                "{}: expected {} input channels, got {}",
                self.name,
                self.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }

    fn strip_rows(&self, w: usize) -> usize {
        (STRIP_ELEMS / (self.patch_len() * w).max(1)).max(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let mut out = Tensor::zeros([n, self.out_ch, h, w]);
        let (in_len, out_len) = (self.in_ch * h * w, self.out_ch * h * w);
        let mut cols = Vec::new();
        for s in 0..n {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let ys = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
            self.forward_sample(xs, h, w, ys, &mut cols);
        }
        Ok(out)
    }

    fn forward_sample(&self, x: &[T], h: usize, w: usize, y: &mut [T], cols: &mut Vec<T>) {
        let hw = h * w;
        let kk = self.patch_len();
        if self.kernel == 1 {
            gemm(
                self.out_ch,
                kk,
                hw,
                T::ONE,
                &self.weight,
                (kk, 1),
                x,
                (hw, 1),
                T::ZERO,
                y,
                (hw, 1),
            );
        } else {
            let strip = self.strip_rows(w);
            let mut r0 = 0;
            while r0 < h {
                let r1 = (r0 + strip).min(h);
                let ncols = (r1 - r0) * w;
                im2col(x, self.in_ch, h, w, self.kernel, r0, r1, cols);
                gemm(
                    self.out_ch,
                    kk,
                    ncols,
                    T::ONE,
                    &self.weight,
                    (kk, 1),
                    cols,
                    (ncols, 1),
                    T::ZERO,
                    &mut y[r0 * w..],
                    (hw, 1),
                );
                r0 = r1;
            }
        }
        for (o, plane) in y.chunks_exact_mut(hw).enumerate() {
            let b = self.bias[o];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }

    /// Analytic gradients given the layer input and the gradient of the loss
    /// with respect to the layer output.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, need_grad_x: bool) -> Result<ConvGrads<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        if grad_out.shape() != [n, self.out_ch, h, w] {
            return Err(Error::shape(format!(
                "{}: output gradient shape {:?} does not match",
                self.name,
                grad_out.shape()
            )));
        }
        let mut grads = ConvGrads {
            grad_x: need_grad_x.then(|| Tensor::zeros(x.shape())),
            grad_w: vec![T::ZERO; self.weight.len()],
            grad_b: vec![T::ZERO; self.out_ch],
        };
        let (in_len, out_len) = (self.in_ch * h * w, self.out_ch * h * w);
        let mut scratch = ConvScratch::default();
        for s in 0..n {
            let xs = &x.data()[s * in_len..(s + 1) * in_len];
            let gs = &grad_out.data()[s * out_len..(s + 1) * out_len];
            let gx = grads
                .grad_x
                .as_mut()
                .map(|g| &mut g.data_mut()[s * in_len..(s + 1) * in_len]);
            self.backward_sample(xs, gs, h, w, gx, &mut grads.grad_w, &mut grads.grad_b, &mut scratch);
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(
        &self,
        x: &[T],
        g: &[T],
        h: usize,
        w: usize,
        mut gx: Option<&mut [T]>,
        gw: &mut [T],
        gb: &mut [T],
        scratch: &mut ConvScratch<T>,
    ) {
        let hw = h * w;
        let kk = self.patch_len();
        for (o, plane) in g.chunks_exact(hw).enumerate() {
            gb[o] += plane.iter().copied().sum::<T>();
        }
        if self.kernel == 1 {
            // gw (out×in) += g (out×hw) · xᵀ (hw×in)
            gemm(self.out_ch, hw, kk, T::ONE, g, (hw, 1), x, (1, hw), T::ONE, gw, (kk, 1));
            if let Some(gx) = gx {
                // gx (in×hw) += wᵀ (in×out) · g (out×hw)
                gemm(
                    kk,
                    self.out_ch,
                    hw,
                    T::ONE,
                    &self.weight,
                    (1, kk),
                    g,
                    (hw, 1),
                    T::ONE,
                    gx,
                    (hw, 1),
                );
            }
            return;
        }
        let strip = self.strip_rows(w);
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + strip).min(h);
            let ncols = (r1 - r0) * w;
            im2col(x, self.in_ch, h, w, self.kernel, r0, r1, &mut scratch.cols);
            let gstrip = &g[r0 * w..];
            gemm(
                self.out_ch,
                ncols,
                kk,
                T::ONE,
                gstrip,
                (hw, 1),
                &scratch.cols,
                (1, ncols),
                T::ONE,
                gw,
                (kk, 1),
            );
            if let Some(gx) = gx.as_deref_mut() {
                scratch.gcols.clear();
                scratch.gcols.resize(kk * ncols, T::ZERO);
                gemm(
                    kk,
                    self.out_ch,
                    ncols,
                    T::ONE,
                    &self.weight,
                    (1, kk),
                    gstrip,
                    (hw, 1),
                    T::ZERO,
                    &mut scratch.gcols,
                    (ncols, 1),
                );
                col2im(&scratch.gcols, self.in_ch, h, w, self.kernel, r0, r1, gx);
            }
            r0 = r1;
        }
    }
}

#[derive(Default)]
struct ConvScratch<T> {
    cols: Vec<T>,
    gcols: Vec<T>,
}

/// Patch matrix for output rows `r0..r1`: row `(ci·k + ky)·k + kx`, column
/// `(r - r0)·w + c`, zero outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, cols: &mut Vec<T>) {
    let ncols = (r1 - r0) * w;
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(ch * k * k * ncols, T::ZERO);
    for ci in 0..ch {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ncols..][..ncols];
                let dx = kx as isize - pad;
                // valid output columns: 0 <= c + dx < w
                let c_lo = (-dx).max(0) as usize;
                let c_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for r in r0..r1 {
                    let sr = r as isize + ky as isize - pad;
                    if sr < 0 || sr >= h as isize || c_lo >= c_hi {
                        continue;
                    }
                    let src = &plane[sr as usize * w..][..w];
                    let dst = &mut row[(r - r0) * w..][..w];
                    let s0 = (c_lo as isize + dx) as usize;
                    dst[c_lo..c_hi].copy_from_slice(&src[s0..s0 + (c_hi - c_lo)]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], ch: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, gx: &mut [T]) {
    let ncols = (r1 - r0) * w;
    let pad = (k / 2) as isize;
    for ci in 0..ch {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ncols..][..ncols];
                let dx = kx as isize - pad;
                let c_lo = (-dx).max(0) as usize;
                let c_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for r in r0..r1 {
                    let sr = r as isize + ky as isize - pad;
                    if sr < 0 || sr >= h as isize || c_lo >= c_hi {
                        continue;
                    }
                    let src = &row[(r - r0) * w..][..w];
                    let s0 = (c_lo as isize + dx) as usize;
                    let dst = &mut plane[sr as usize * w + s0..][..c_hi - c_lo];
                    for (d, &v) in dst.iter_mut().zip(&src[c_lo..c_hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per
/// output value, the flat input index it came from. Ties go to the first
/// element in row-major window order.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max pooling needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for r in 0..oh {
            for col in 0..ow {
                let mut best = base + 2 * r * w + 2 * col;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * r + dr) * w + 2 * col + dc;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = (p * oh + r) * ow + col;
                od[o] = xd[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor<T>, argmax: &[u32], input_shape: [usize; 4]) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        gd[i as usize] += g;
    }
    gx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let od = out.data_mut();
    for p in 0..n * c {
        for r in 0..2 * h {
            for col in 0..2 * w {
                od[(p * 2 * h + r) * 2 * w + col] = x.data()[(p * h + r / 2) * w + col / 2];
            }
        }
    }
    out
}

/// Sums the four children of each source cell.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = grad_out.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Tensor::zeros([n, c, h, w]);
    let gd = gx.data_mut();
    for p in 0..n * c {
        for r in 0..h2 {
            for col in 0..w2 {
                gd[(p * h + r / 2) * w + col / 2] += grad_out.data()[(p * h2 + r) * w2 + col];
            }
        }
    }
    gx
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

/// Zero the gradient wherever the (post-activation) output was not positive.
pub fn relu_backward_in_place<T: Scalar>(grad: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if !(y > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if n != nb || h != hb || w != wb {
        return Err(Error::shape("concatenated tensors differ in batch or spatial size"));
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * h * w..(s + 1) * ca * h * w]);
        data.extend_from_slice(&b.data()[s * cb * h * w..(s + 1) * cb * h * w]);
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`]: split off the first `ca` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let cb = c - ca;
    let (mut a, mut b) = (Vec::with_capacity(n * ca * h * w), Vec::with_capacity(n * cb * h * w));
    for s in 0..n {
        let base = s * c * h * w;
        a.extend_from_slice(&x.data()[base..base + ca * h * w]);
        b.extend_from_slice(&x.data()[base + ca * h * w..base + c * h * w]);
    }
    (
        Tensor::from_vec([n, ca, h, w], a).unwrap(),
        Tensor::from_vec([n, cb, h, w], b).unwrap(),
    )
}
