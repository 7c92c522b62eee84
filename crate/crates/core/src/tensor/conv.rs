use rayon::prelude::*;

use super::Tensor3;
use crate::error::{Error, Result};

/// Convolution weights in `(out, in, kh, kw)` order plus one bias per output.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::Dimension(format!(
                "kernel {}x{}x{}x{} needs {} weights and {} biases, got {} and {}",
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                expected,
                out_channels,
                weights.len(),
                bias.len()
            )));
        }
        Ok(ConvKernel {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
        }
    }

    /// A single-output kernel whose taps are `template`, with zero bias.
    pub fn from_template(template: &Tensor3) -> Self {
        ConvKernel {
            out_channels: 1,
            in_channels: template.channels(),
            kernel_h: template.height(),
            kernel_w: template.width(),
            weights: template.data().to_vec(),
            bias: vec![0.0],
        }
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    #[inline]
    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }
    #[inline]
    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }
    /// `[out, in, kh, kw]`
    pub fn dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    /// Taps of output channel `o` viewed as an `(in, kh, kw)` tensor.
    pub fn filter(&self, o: usize) -> Tensor3 {
        let n = self.in_channels * self.kernel_h * self.kernel_w;
        Tensor3::from_vec(
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
            self.weights[o * n..(o + 1) * n].to_vec(),
        )
        .expect("filter slice has kernel shape")
    }

    /// Sum of squared weights; biases excluded.
    pub fn weight_sum_sq(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64 * w as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn shape_str(&self) -> String {
        format!(
            "{}x{}x{}x{}",
            self.out_channels, self.in_channels, self.kernel_h, self.kernel_w
        )
    }
}

/// Output rows handled per im2col block; fixed so results never depend on
/// how many threads run the blocks.
const BLOCK_COLS: usize = 2048;

/// Valid (unpadded) cross-correlation at stride 1:
/// `out[o] = bias[o] + sum_i input[i] * weights[o, i]`.
pub fn conv2d_valid(input: &Tensor3, kernel: &ConvKernel) -> Result<Tensor3> {
    let (c, h, w) = input.shape();
    let [oc, ic, kh, kw] = kernel.dims();
    if c != ic || h < kh || w < kw {
        return Err(Error::Dimension(format!(
            "conv of input {} with kernel {}",
            input.shape_str(),
            kernel.shape_str()
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let n_out = oh * ow;
    let k_len = ic * kh * kw;
    if oc == 1 {
        return conv2d_single(input, kernel, oh, ow);
    }

    let weights64: Vec<f64> = kernel.weights.iter().map(|&v| v as f64).collect();
    let rows_per_block = (BLOCK_COLS / ow).max(1);
    let row_blocks: Vec<(usize, usize)> = (0..oh)
        .step_by(rows_per_block)
        .map(|r0| (r0, (r0 + rows_per_block).min(oh)))
        .collect();

    let blocks: Vec<Vec<f64>> = row_blocks
        .par_iter()
        .map(|&(r0, r1)| {
            let cols = (r1 - r0) * ow;
            // im2col: row index (i, ky, kx), column index (y, x)
            let mut patches = vec![0f64; k_len * cols];
            for i in 0..ic {
                let plane = input.channel(i);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = (i * kh + ky) * kw + kx;
                        let dst = &mut patches[row * cols..(row + 1) * cols];
                        for y in r0..r1 {
                            let src = &plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                            let d = &mut dst[(y - r0) * ow..(y - r0 + 1) * ow];
                            for (a, &b) in d.iter_mut().zip(src) {
                                *a = b as f64;
                            }
                        }
                    }
                }
            }
            let mut out = vec![0f64; oc * cols];
            // SAFETY: all three buffers are dense row-major with the given
            // strides and sizes (oc x k_len) * (k_len x cols) = (oc x cols).
            unsafe {
                matrixmultiply::dgemm(
                    oc,
                    k_len,
                    cols,
                    1.0,
                    weights64.as_ptr(),
                    k_len as isize,
                    1,
                    patches.as_ptr(),
                    cols as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            out
        })
        .collect();

    let mut data = vec![0f32; oc * n_out];
    for (&(r0, r1), block) in row_blocks.iter().zip(&blocks) {
        let cols = (r1 - r0) * ow;
        for o in 0..oc {
            let b = kernel.bias[o] as f64;
            let dst = &mut data[o * n_out + r0 * ow..o * n_out + r1 * ow];
            for (d, &v) in dst.iter_mut().zip(&block[o * cols..(o + 1) * cols]) {
                *d = (v + b) as f32;
            }
        }
    }
    Tensor3::from_vec(oc, oh, ow, data)
}

/// Single-output kernels (the learned heads) skip im2col: the patch matrix
/// would dwarf the arithmetic, and the heads evaluate it hundreds of times.
fn conv2d_single(input: &Tensor3, kernel: &ConvKernel, oh: usize, ow: usize) -> Result<Tensor3> {
    let [_, ic, kh, kw] = kernel.dims();
    let w = input.width();
    let mut acc = vec![kernel.bias[0] as f64; oh * ow];
    for i in 0..ic {
        let plane = input.channel(i);
        for ky in 0..kh {
            for kx in 0..kw {
                let wt = kernel.weight(0, i, ky, kx) as f64;
                if wt == 0.0 {
                    continue;
                }
                for y in 0..oh {
                    let src = &plane[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                    for (a, &v) in acc[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                        *a += v as f64 * wt;
                    }
                }
            }
        }
    }
    Tensor3::from_vec(1, oh, ow, acc.into_iter().map(|v| v as f32).collect())
}

/// Convolution with a zero border of `kh / 2` (resp. `kw / 2`), so odd
/// kernels preserve spatial size.
pub fn conv2d_same(input: &Tensor3, kernel: &ConvKernel) -> Result<Tensor3> {
    if kernel.kernel_h != kernel.kernel_w || kernel.kernel_h.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "same-padding needs an odd square kernel, got {}",
            kernel.shape_str()
        )));
    }
    conv2d_valid(&input.pad_zero(kernel.kernel_h / 2), kernel)
}

/// Gradient of a scalar loss with respect to the input of [`conv2d_valid`],
/// given the gradient with respect to its output: a full correlation of
/// `output_grad` with the spatially flipped kernel.
pub fn conv2d_input_grad(output_grad: &Tensor3, kernel: &ConvKernel) -> Result<Tensor3> {
    let (gc, gh, gw) = output_grad.shape();
    let [oc, ic, kh, kw] = kernel.dims();
    if gc != oc {
        return Err(Error::Dimension(format!(
            "output gradient {} against kernel {}",
            output_grad.shape_str(),
            kernel.shape_str()
        )));
    }
    let (h, w) = (gh + kh - 1, gw + kw - 1);
    let mut acc = vec![0f64; ic * h * w];
    for o in 0..oc {
        let g = output_grad.channel(o);
        for i in 0..ic {
            let dst = &mut acc[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wt = kernel.weight(o, i, ky, kx) as f64;
                    if wt == 0.0 {
                        continue;
                    }
                    for y in 0..gh {
                        let row = &mut dst[(y + ky) * w + kx..(y + ky) * w + kx + gw];
                        for (a, &gv) in row.iter_mut().zip(&g[y * gw..(y + 1) * gw]) {
                            *a += gv as f64 * wt;
                        }
                    }
                }
            }
        }
    }
    Tensor3::from_vec(ic, h, w, acc.into_iter().map(|v| v as f32).collect())
}

/// Gradient of a scalar loss with respect to the kernel weights and bias of
/// [`conv2d_valid`], returned as a kernel-shaped value.
pub fn conv2d_kernel_grad(input: &Tensor3, output_grad: &Tensor3, dims: [usize; 4]) -> Result<ConvKernel> {
    let [oc, ic, kh, kw] = dims;
    let (c, h, w) = input.shape();
    let (gc, gh, gw) = output_grad.shape();
    if c != ic || gc != oc || h + 1 != gh + kh || w + 1 != gw + kw {
        return Err(Error::Dimension(format!(
            "kernel gradient for {}x{}x{}x{} from input {} and output gradient {}",
            oc,
            ic,
            kh,
            kw,
            input.shape_str(),
            output_grad.shape_str()
        )));
    }
    let mut weights = vec![0f32; oc * ic * kh * kw];
    let mut bias = vec![0f32; oc];
    for o in 0..oc {
        let g = output_grad.channel(o);
        bias[o] = g.iter().map(|&v| v as f64).sum::<f64>() as f32;
        for i in 0..ic {
            let plane = input.channel(i);
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut s = 0f64;
                    for y in 0..gh {
                        let src = &plane[(y + ky) * w + kx..(y + ky) * w + kx + gw];
                        for (&a, &b) in src.iter().zip(&g[y * gw..(y + 1) * gw]) {
                            s += a as f64 * b as f64;
                        }
                    }
                    weights[((o * ic + i) * kh + ky) * kw + kx] = s as f32;
                }
            }
        }
    }
    ConvKernel::new(oc, ic, kh, kw, weights, bias)
}

/// Sliding-window inner product of `template` over `search`; the template
/// acts as a one-output kernel with zero bias.
pub fn cross_correlate(search: &Tensor3, template: &Tensor3) -> Result<Tensor3> {
    let (c, h, w) = search.shape();
    let (tc, th, tw) = template.shape();
    if c != tc || th > h || tw > w || th == 0 || tw == 0 {
        return Err(Error::Dimension(format!(
            "correlate template {} over search {}",
            template.shape_str(),
            search.shape_str()
        )));
    }
    let (oh, ow) = (h - th + 1, w - tw + 1);
    let mut acc = vec![0f64; oh * ow];
    for ch in 0..c {
        let s = search.channel(ch);
        let t = template.channel(ch);
        for ty in 0..th {
            for tx in 0..tw {
                let tv = t[ty * tw + tx] as f64;
                if tv == 0.0 {
                    continue;
                }
                for y in 0..oh {
                    let src = &s[(y + ty) * w + tx..(y + ty) * w + tx + ow];
                    for (a, &sv) in acc[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                        *a += sv as f64 * tv;
                    }
                }
            }
        }
    }
    Tensor3::from_vec(1, oh, ow, acc.into_iter().map(|v| v as f32).collect())
}
