//! 2-D cross-correlation via patch-matrix expansion.
//!
//! Each sample is unrolled into a `[ci * kh * kw, ho * wo]` column matrix so
//! the forward pass and both backward products are single matrix multiplies.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Operand, Tensor};

/// Forward-pass state needed by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvCache {
    input: Tensor,
    kernel_shape: [usize; 4],
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (&[batch, ci, h, w], &[co, kci, kh, kw]) = (input, kernel) else {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [b,c,h,w] input and [co,ci,kh,kw] kernel, got {input:?} and {kernel:?}"
            )));
        };
        if ci != kci {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {ci} channels, kernel expects {kci}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::ShapeMismatch(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Input column for output column `ox` at kernel column `kj`, if inside the image.
    #[inline]
    fn src_col(&self, ox: usize, kj: usize) -> Option<usize> {
        (ox * self.stride + kj).checked_sub(self.padding).filter(|&x| x < self.w)
    }

    #[inline]
    fn src_row(&self, oy: usize, ki: usize) -> Option<usize> {
        (oy * self.stride + ki).checked_sub(self.padding).filter(|&y| y < self.h)
    }

    fn im2col(&self, sample: &[f32], cols: &mut [f32]) {
        let p = self.out_pixels();
        for c in 0..self.ci {
            let plane = &sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let dst = &mut cols[row..row + p];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.src_row(oy, ki) {
                            None => line.fill(0.0),
                            Some(y) => {
                                let src = &plane[y * self.w..(y + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = self.src_col(ox, kj).map_or(0.0, |x| src[x]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], sample: &mut [f32]) {
        let p = self.out_pixels();
        for c in 0..self.ci {
            let plane = &mut sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let src = &cols[row..row + p];
                    for oy in 0..self.ho {
                        let Some(y) = self.src_row(oy, ki) else { continue };
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[y * self.w..(y + 1) * self.w];
                        for (ox, g) in line.iter().enumerate() {
                            if let Some(x) = self.src_col(ox, kj) {
                                dst[x] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output of a convolution; `kernel` is `[co, ci, kh, kw]`, `bias` is `[co]`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = Geometry::new(x.shape(), kernel.shape(), stride, padding)?;
    if bias.shape() != [g.co] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias {:?}, expected [{}]",
            bias.shape(),
            g.co
        )));
    }
    let (k, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    let mut out = vec![0.0f32; g.batch * out_len];
    let mut cols = vec![0.0f32; k * p];
    for n in 0..g.batch {
        g.im2col(&x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        for (c, chunk) in dst.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias.data()[c]);
        }
        gemm(
            g.co,
            k,
            p,
            Operand::plain(kernel.data(), k),
            Operand::plain(&cols, p),
            dst,
            true,
        );
    }
    Tensor::from_vec(&[g.batch, g.co, g.ho, g.wo], out)
}

pub fn conv2d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvCache)> {
    let out = conv2d(x, kernel, bias, stride, padding)?;
    Ok((out, ConvCache::new(x.clone(), kernel, stride, padding)))
}

impl ConvCache {
    pub fn new(input: Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Self {
        let ks = kernel.shape();
        Self {
            input,
            kernel_shape: [ks[0], ks[1], ks[2], ks[3]],
            stride,
            padding,
        }
    }
}

pub fn conv2d_backward(grad_out: &Tensor, cache: &ConvCache, kernel: &Tensor) -> Result<ConvGrads> {
    conv2d_backward_impl(grad_out, cache, kernel, true)
}

/// Backward pass; with `input_grad == false` the input gradient is left as zeros.
pub(crate) fn conv2d_backward_impl(
    grad_out: &Tensor,
    cache: &ConvCache,
    kernel: &Tensor,
    input_grad: bool,
) -> Result<ConvGrads> {
    if kernel.shape() != cache.kernel_shape {
        return Err(Error::Contract(format!(
            "conv2d cache was recorded for kernel {:?}, got {:?}",
            cache.kernel_shape,
            kernel.shape()
        )));
    }
    let g = Geometry::new(cache.input.shape(), kernel.shape(), cache.stride, cache.padding)?;
    if grad_out.shape() != [g.batch, g.co, g.ho, g.wo] {
        return Err(Error::Contract(format!(
            "conv2d grad_out {:?} does not match cached forward output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.batch,
            g.co,
            g.ho,
            g.wo
        )));
    }
    let (k, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.ci * g.h * g.w;
    let out_len = g.co * p;
    let mut grad_kernel = vec![0.0f32; g.co * k];
    let mut grad_bias = vec![0.0f32; g.co];
    let mut grad_input = vec![0.0f32; g.batch * in_len];
    let mut cols = vec![0.0f32; k * p];
    let mut grad_cols = if input_grad { vec![0.0f32; k * p] } else { Vec::new() };
    for n in 0..g.batch {
        let gout = &grad_out.data()[n * out_len..(n + 1) * out_len];
        for (c, chunk) in gout.chunks_exact(p).enumerate() {
            grad_bias[c] += chunk.iter().sum::<f32>();
        }
        g.im2col(&cache.input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        // dK += dY * cols^T
        gemm(
            g.co,
            p,
            k,
            Operand::plain(gout, p),
            Operand::transposed(&cols, p),
            &mut grad_kernel,
            true,
        );
        if input_grad {
            // dcols = K^T * dY
            gemm(
                k,
                g.co,
                p,
                Operand::transposed(kernel.data(), k),
                Operand::plain(gout, p),
                &mut grad_cols,
                false,
            );
            g.col2im(&grad_cols, &mut grad_input[n * in_len..(n + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(cache.input.shape(), grad_input)?,
        kernel: Tensor::from_vec(kernel.shape(), grad_kernel)?,
        bias: Tensor::from_vec(&[g.co], grad_bias)?,
    })
}
