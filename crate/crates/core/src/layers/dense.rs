use crate::error::{Error, Result};
use crate::tensor::{gemm, Operand, Tensor};

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
    weight_shape: [usize; 2],
}

impl DenseCache {
    pub fn new(input: Tensor, weight: &Tensor) -> Self {
        Self {
            input,
            weight_shape: [weight.shape()[0], weight.shape()[1]],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `y = x * W^T + bias` for `x: [b, in]`, `W: [out, in]`, `bias: [out]`.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (&[b, fan_in], &[out, w_in]) = (x.shape(), weight.shape()) else {
        return Err(Error::ShapeMismatch(format!(
            "dense expects [b,in] input and [out,in] weight, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    };
    if fan_in != w_in {
        return Err(Error::ShapeMismatch(format!(
            "dense input width {fan_in} vs weight width {w_in}"
        )));
    }
    if bias.shape() != [out] {
        return Err(Error::ShapeMismatch(format!(
            "dense bias {:?}, expected [{out}]",
            bias.shape()
        )));
    }
    let mut y = Vec::with_capacity(b * out);
    for _ in 0..b {
        y.extend_from_slice(bias.data());
    }
    gemm(
        b,
        fan_in,
        out,
        Operand::plain(x.data(), fan_in),
        Operand::transposed(weight.data(), fan_in),
        &mut y,
        true,
    );
    Tensor::from_vec(&[b, out], y)
}

pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, DenseCache)> {
    let y = dense(x, weight, bias)?;
    Ok((y, DenseCache::new(x.clone(), weight)))
}

pub fn dense_backward(grad_out: &Tensor, cache: &DenseCache, weight: &Tensor) -> Result<DenseGrads> {
    dense_backward_impl(grad_out, cache, weight, true)
}

pub(crate) fn dense_backward_impl(
    grad_out: &Tensor,
    cache: &DenseCache,
    weight: &Tensor,
    input_grad: bool,
) -> Result<DenseGrads> {
    if weight.shape() != cache.weight_shape {
        return Err(Error::Contract(format!(
            "dense cache was recorded for weight {:?}, got {:?}",
            cache.weight_shape,
            weight.shape()
        )));
    }
    let [out, fan_in] = cache.weight_shape;
    let b = cache.input.shape()[0];
    if grad_out.shape() != [b, out] {
        return Err(Error::Contract(format!(
            "dense grad_out {:?}, expected [{b}, {out}]",
            grad_out.shape()
        )));
    }
    let mut gw = vec![0.0f32; out * fan_in];
    gemm(
        out,
        b,
        fan_in,
        Operand::transposed(grad_out.data(), out),
        Operand::plain(cache.input.data(), fan_in),
        &mut gw,
        false,
    );
    let mut gb = vec![0.0f32; out];
    for row in grad_out.data().chunks_exact(out) {
        for (acc, g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut gx = vec![0.0f32; b * fan_in];
    if input_grad {
        gemm(
            b,
            out,
            fan_in,
            Operand::plain(grad_out.data(), out),
            Operand::plain(weight.data(), fan_in),
            &mut gx,
            false,
        );
    }
    Ok(DenseGrads {
        input: Tensor::from_vec(&[b, fan_in], gx)?,
        weight: Tensor::from_vec(&[out, fan_in], gw)?,
        bias: Tensor::from_vec(&[out], gb)?,
    })
}
