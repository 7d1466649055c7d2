//! Forward and backward passes for the CIDIS layer vocabulary.
//!
//! The free functions (`conv2d_forward`, `relu_backward`, ...) are pure and
//! return explicit caches. [`Layer`] wraps them with parameters and the cache
//! of the most recent forward call so a network can run them in sequence.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{
    check_rate, dropout_backward, dropout_forward, relu, relu_backward, relu_forward, DropoutCache,
    ReluCache,
};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, ConvCache, ConvGrads};
pub use dense::{dense, dense_backward, dense_forward, DenseCache, DenseGrads};
pub use loss::{softmax, softmax_xent, XentOutput};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolCache};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
    Dense,
    Dropout,
    SoftmaxXent,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
            LayerKind::SoftmaxXent => "softmax_xent",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            kernel: Tensor::zeros(&[out_ch, in_ch, kernel, kernel])?,
            bias: Tensor::zeros(&[out_ch])?,
            stride,
            padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    cache: Option<DenseCache>,
}

impl Dense {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: Tensor::zeros(&[fan_out, fan_in])?,
            bias: Tensor::zeros(&[fan_out])?,
            cache: None,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu(Option<ReluCache>),
    MaxPool2d {
        window: usize,
        stride: usize,
        cache: Option<PoolCache>,
    },
    Flatten(Option<Vec<usize>>),
    Dense(Dense),
    Dropout {
        rate: f32,
        cache: Option<DropoutCache>,
    },
    /// Terminal marker; the network's forward pass stops at the logits and the
    /// loss is evaluated by [`softmax_xent`].
    SoftmaxXent {
        classes: usize,
    },
}

/// Gradients produced by one layer's backward pass.
pub struct LayerGrads {
    pub input: Option<Tensor>,
    pub params: Vec<(String, Tensor)>,
}

fn missing_cache(kind: LayerKind) -> Error {
    Error::Contract(format!("{} backward called without a forward cache", kind.as_str()))
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(None)
    }

    pub fn maxpool(window: usize, stride: usize) -> Self {
        Layer::MaxPool2d { window, stride, cache: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten(None)
    }

    pub fn dropout(rate: f32) -> Result<Self> {
        check_rate(rate)?;
        Ok(Layer::Dropout { rate, cache: None })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Dropout { .. } => LayerKind::Dropout,
            Layer::SoftmaxXent { .. } => LayerKind::SoftmaxXent,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![
                (format!("{}.weight", c.name), &c.kernel),
                (format!("{}.bias", c.name), &c.bias),
            ],
            Layer::Dense(d) => vec![
                (format!("{}.weight", d.name), &d.weight),
                (format!("{}.bias", d.name), &d.bias),
            ],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Layer::Conv2d(c) => vec![
                (format!("{}.weight", c.name), &mut c.kernel),
                (format!("{}.bias", c.name), &mut c.bias),
            ],
            Layer::Dense(d) => vec![
                (format!("{}.weight", d.name), &mut d.weight),
                (format!("{}.bias", d.name), &mut d.bias),
            ],
            _ => Vec::new(),
        }
    }

    /// One-line manifest entry: kind, hyperparameters and parameter shapes.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv2d(c) => format!(
                "conv2d name={} in={} out={} kernel={} stride={} padding={}",
                c.name,
                c.in_channels(),
                c.out_channels(),
                c.kernel_size(),
                c.stride,
                c.padding
            ),
            Layer::Relu(_) => "relu".into(),
            Layer::MaxPool2d { window, stride, .. } => format!("maxpool2d window={window} stride={stride}"),
            Layer::Flatten(_) => "flatten".into(),
            Layer::Dense(d) => format!("dense name={} in={} out={}", d.name, d.fan_in(), d.fan_out()),
            Layer::Dropout { rate, .. } => format!("dropout rate={rate}"),
            Layer::SoftmaxXent { classes } => format!("softmax_xent classes={classes}"),
        }
    }

    /// Per-sample output shape for a per-sample input shape (no batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(Error::ShapeMismatch(format!(
                "{} cannot follow an input of shape {input:?}: {what}",
                self.kind().as_str()
            )))
        };
        match self {
            Layer::Conv2d(c) => {
                let &[ch, h, w] = input else { return mismatch("needs [c,h,w]") };
                let k = c.kernel_size();
                if ch != c.in_channels() {
                    return mismatch("channel count differs");
                }
                if h + 2 * c.padding < k || w + 2 * c.padding < k || c.stride == 0 {
                    return mismatch("kernel larger than padded input");
                }
                Ok(vec![
                    c.out_channels(),
                    (h + 2 * c.padding - k) / c.stride + 1,
                    (w + 2 * c.padding - k) / c.stride + 1,
                ])
            }
            Layer::MaxPool2d { window, stride, .. } => {
                let &[ch, h, w] = input else { return mismatch("needs [c,h,w]") };
                if *window > h || *window > w || *stride == 0 || *window == 0 {
                    return mismatch("window larger than input");
                }
                Ok(vec![ch, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            Layer::Flatten(_) => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                if input != [d.fan_in()] {
                    return mismatch("width differs");
                }
                Ok(vec![d.fan_out()])
            }
            Layer::SoftmaxXent { classes } => {
                if input != [*classes] {
                    return mismatch("class count differs");
                }
                Ok(input.to_vec())
            }
            Layer::Relu(_) | Layer::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Eval-mode forward pass through a shared layer.
    pub fn infer(&self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => conv2d(&x, &c.kernel, &c.bias, c.stride, c.padding),
            Layer::Relu(_) => Ok(relu(&x)),
            Layer::MaxPool2d { window, stride, .. } => Ok(maxpool2d_forward(&x, *window, *stride)?.0),
            Layer::Flatten(_) => {
                let b = x.shape()[0];
                let n = x.len() / b;
                x.reshape(&[b, n])
            }
            Layer::Dense(d) => dense(&x, &d.weight, &d.bias),
            Layer::Dropout { .. } | Layer::SoftmaxXent { .. } => Ok(x),
        }
    }

    /// Runs the layer; with `keep_cache == false` nothing is retained for backward.
    pub fn forward(&mut self, x: Tensor, mode: Mode, rng: &mut Rng, keep_cache: bool) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => {
                let y = conv2d(&x, &c.kernel, &c.bias, c.stride, c.padding)?;
                c.cache = keep_cache.then(|| ConvCache::new(x, &c.kernel, c.stride, c.padding));
                Ok(y)
            }
            Layer::Relu(cache) => {
                if keep_cache {
                    let (y, rc) = relu_forward(&x);
                    *cache = Some(rc);
                    Ok(y)
                } else {
                    *cache = None;
                    Ok(relu(&x))
                }
            }
            Layer::MaxPool2d { window, stride, cache } => {
                let (y, pc) = maxpool2d_forward(&x, *window, *stride)?;
                *cache = keep_cache.then_some(pc);
                Ok(y)
            }
            Layer::Flatten(cache) => {
                let b = x.shape()[0];
                *cache = keep_cache.then(|| x.shape().to_vec());
                let n = x.len() / b;
                x.reshape(&[b, n])
            }
            Layer::Dense(d) => {
                let y = dense(&x, &d.weight, &d.bias)?;
                d.cache = keep_cache.then(|| DenseCache::new(x, &d.weight));
                Ok(y)
            }
            Layer::Dropout { rate, cache } => {
                let (y, dc) = dropout_forward(&x, *rate, mode, rng)?;
                *cache = keep_cache.then_some(dc);
                Ok(y)
            }
            Layer::SoftmaxXent { .. } => Ok(x),
        }
    }

    /// Backpropagates `grad`; the input gradient is computed only when `input_grad`.
    /// The cache is consumed, so a second call without a new forward fails.
    pub fn backward(&mut self, grad: Tensor, input_grad: bool) -> Result<LayerGrads> {
        let kind = self.kind();
        match self {
            Layer::Conv2d(c) => {
                let cache = c.cache.take().ok_or_else(|| missing_cache(kind))?;
                let g = conv::conv2d_backward_impl(&grad, &cache, &c.kernel, input_grad)?;
                Ok(LayerGrads {
                    input: input_grad.then_some(g.input),
                    params: vec![
                        (format!("{}.weight", c.name), g.kernel),
                        (format!("{}.bias", c.name), g.bias),
                    ],
                })
            }
            Layer::Dense(d) => {
                let cache = d.cache.take().ok_or_else(|| missing_cache(kind))?;
                let g = dense::dense_backward_impl(&grad, &cache, &d.weight, input_grad)?;
                Ok(LayerGrads {
                    input: input_grad.then_some(g.input),
                    params: vec![
                        (format!("{}.weight", d.name), g.weight),
                        (format!("{}.bias", d.name), g.bias),
                    ],
                })
            }
            Layer::Relu(cache) => {
                let cache = cache.take().ok_or_else(|| missing_cache(kind))?;
                Ok(LayerGrads {
                    input: Some(relu_backward(&grad, &cache)?),
                    params: Vec::new(),
                })
            }
            Layer::MaxPool2d { cache, .. } => {
                let cache = cache.take().ok_or_else(|| missing_cache(kind))?;
                Ok(LayerGrads {
                    input: Some(maxpool2d_backward(&grad, &cache)?),
                    params: Vec::new(),
                })
            }
            Layer::Flatten(cache) => {
                let shape = cache.take().ok_or_else(|| missing_cache(kind))?;
                Ok(LayerGrads {
                    input: Some(grad.reshape(&shape)?),
                    params: Vec::new(),
                })
            }
            Layer::Dropout { cache, .. } => {
                let cache = cache.take().ok_or_else(|| missing_cache(kind))?;
                Ok(LayerGrads {
                    input: Some(dropout_backward(&grad, &cache)?),
                    params: Vec::new(),
                })
            }
            Layer::SoftmaxXent { .. } => Ok(LayerGrads {
                input: Some(grad),
                params: Vec::new(),
            }),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(c) => c.cache = None,
            Layer::Dense(d) => d.cache = None,
            Layer::Relu(c) => *c = None,
            Layer::MaxPool2d { cache, .. } => *cache = None,
            Layer::Flatten(c) => *c = None,
            Layer::Dropout { cache, .. } => *cache = None,
            Layer::SoftmaxXent { .. } => {}
        }
    }
}
