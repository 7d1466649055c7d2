use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

/// Per-window maximum over `[b, c, h, w]`. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool2d_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolCache)> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2d expects [b,c,h,w], got {:?}",
            x.shape()
        )));
    };
    if window == 0 || stride == 0 {
        return Err(Error::InvalidShape("maxpool2d window and stride must be >= 1".into()));
    }
    if window > h || window > w {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2d window {window} exceeds spatial extent {h}x{w}"
        )));
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let data = x.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = data[best_idx];
                for i in 0..window {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for j in 0..window {
                        let v = data[row + j];
                        if v > best {
                            best = v;
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let output_shape = vec![b, c, ho, wo];
    Ok((
        Tensor::from_vec(&output_shape, out)?,
        PoolCache {
            input_shape: x.shape().to_vec(),
            output_shape,
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.shape() != cache.output_shape.as_slice() {
        return Err(Error::Contract(format!(
            "maxpool2d grad_out {:?} does not match cached output {:?}",
            grad_out.shape(),
            cache.output_shape
        )));
    }
    let mut grad = Tensor::zeros(&cache.input_shape)?;
    let g = grad.data_mut();
    for (&idx, &d) in cache.argmax.iter().zip(grad_out.data()) {
        g[idx] += d;
    }
    Ok(grad)
}
