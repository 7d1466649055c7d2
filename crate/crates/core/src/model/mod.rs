//! The CIDIS network: three (conv, conv, max-pool) blocks followed by a
//! fully connected head, plus checkpointing and the transfer-learning surgery.

mod checkpoint;

pub use checkpoint::{load, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{check_rate, softmax_xent, Conv2d, Dense, Layer, LayerKind, Mode, XentOutput};
use crate::optim::{NamedTensors, Optimizer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Geometry of a CIDIS-family network.
#[derive(Clone, Debug, PartialEq)]
pub struct CidisConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Filter count of each (conv, conv, pool) block.
    pub widths: [usize; 3],
    /// Width of the hidden fully connected layer.
    pub hidden: usize,
    /// 1: dropout after the hidden layer; 2: also before it.
    pub dropout_layers: u8,
    pub dropout_rate: f32,
    pub num_classes: usize,
}

impl Default for CidisConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            widths: [32, 64, 128],
            hidden: 50,
            dropout_layers: 1,
            dropout_rate: 0.2,
            num_classes: 4,
        }
    }
}

impl CidisConfig {
    /// Proportionally shrunken variant for small inputs: filter widths scale
    /// with `input_size / 224` (at least one filter each).
    pub fn scaled(input_size: usize) -> Self {
        let base = Self::default();
        let factor = input_size as f64 / base.input_size as f64;
        let widths = base.widths.map(|w| ((w as f64 * factor).round() as usize).max(1));
        Self {
            input_size,
            widths,
            ..base
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_size < 8 {
            return Err(Error::Config(format!(
                "input size {} too small for three 2x2 pools",
                self.input_size
            )));
        }
        if self.widths.contains(&0) || self.hidden == 0 || self.num_classes < 2 {
            return Err(Error::Config("widths, hidden and classes must be positive".into()));
        }
        if !(1..=2).contains(&self.dropout_layers) {
            return Err(Error::Config(format!(
                "dropout_layers must be 1 or 2, got {}",
                self.dropout_layers
            )));
        }
        check_rate(self.dropout_rate)
    }

    /// Spatial side after the three pools.
    pub fn feature_side(&self) -> usize {
        self.input_size / 8
    }
}

fn head_layers(flat: usize, hidden: usize, classes: usize, dropout_layers: u8, rate: f32) -> Result<Vec<Layer>> {
    let mut head = vec![Layer::flatten()];
    if dropout_layers >= 2 {
        head.push(Layer::dropout(rate)?);
    }
    head.push(Layer::Dense(Dense::new("fc1", flat, hidden)?));
    head.push(Layer::relu());
    head.push(Layer::dropout(rate)?);
    head.push(Layer::Dense(Dense::new("fc2", hidden, classes)?));
    head.push(Layer::SoftmaxXent { classes });
    Ok(head)
}

/// Builds and initializes a CIDIS network with the given geometry.
pub fn build(config: &CidisConfig, rng: &mut Rng) -> Result<Network> {
    config.validate()?;
    let mut layers = Vec::new();
    let mut in_ch = 3;
    let mut n = 0;
    for &width in &config.widths {
        for _ in 0..2 {
            n += 1;
            layers.push(Layer::Conv2d(Conv2d::new(format!("conv{n}"), in_ch, width, 3, 1, 1)?));
            layers.push(Layer::relu());
            in_ch = width;
        }
        layers.push(Layer::maxpool(2, 2));
    }
    let side = config.feature_side();
    layers.extend(head_layers(
        in_ch * side * side,
        config.hidden,
        config.num_classes,
        config.dropout_layers,
        config.dropout_rate,
    )?);
    let mut net = Network::from_layers([3, config.input_size, config.input_size], layers)?;
    net.init_params(rng, |_| true)?;
    Ok(net)
}

/// The full-size CIDIS model for 224x224 RGB input and four ripeness classes.
pub fn build_cidis(rng: &mut Rng) -> Result<Network> {
    build(&CidisConfig::default(), rng)
}

/// Ordered layer stack with named parameters and a frozen-parameter set.
#[derive(Clone, Debug)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    frozen: BTreeSet<String>,
}

impl Network {
    /// Validates that the layer shapes compose and that the stack ends in a
    /// dense layer feeding `softmax_xent` with matching class count.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut names = BTreeSet::new();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            for (name, _) in layer.params() {
                if !names.insert(name.clone()) {
                    return Err(Error::Config(format!("duplicate parameter name '{name}'")));
                }
            }
        }
        match layers.as_slice() {
            [.., Layer::Dense(_), Layer::SoftmaxXent { .. }] => {}
            _ => {
                return Err(Error::Config(
                    "network must end with a dense layer followed by softmax_xent".into(),
                ))
            }
        }
        if layers[..layers.len() - 1].iter().any(|l| l.kind() == LayerKind::SoftmaxXent) {
            return Err(Error::Config("softmax_xent may only appear last".into()));
        }
        Ok(Self {
            input_shape,
            layers,
            frozen: BTreeSet::new(),
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::SoftmaxXent { classes }) => *classes,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// One line per layer, preceded by the input shape.
    pub fn manifest(&self) -> String {
        let [c, h, w] = self.input_shape;
        let mut text = format!("input {c}x{h}x{w}\n");
        for layer in &self.layers {
            text.push_str(&layer.describe());
            text.push('\n');
        }
        text
    }

    /// Stable 64-bit hash of (kind, hyperparameters, parameter shapes) per layer.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        let [c, h, w] = self.input_shape;
        hasher.update(format!("input {c}x{h}x{w}\n").as_bytes());
        for layer in &self.layers {
            hasher.update(layer.describe().as_bytes());
            for (name, t) in layer.params() {
                hasher.update(format!(" {name}{:?}", t.shape()).as_bytes());
            }
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_be_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Bytes of raw `f32` weight payload (no headers, no optimizer state).
    pub fn weight_bytes(&self) -> usize {
        self.param_count() * std::mem::size_of::<f32>()
    }

    /// Names of every convolution parameter.
    pub fn conv_param_names(&self) -> BTreeSet<String> {
        self.layers
            .iter()
            .filter(|l| l.kind() == LayerKind::Conv2d)
            .flat_map(|l| l.params().into_iter().map(|(n, _)| n))
            .collect()
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn set_frozen(&mut self, names: BTreeSet<String>) -> Result<()> {
        let known: BTreeSet<String> = self.params().into_iter().map(|(n, _)| n).collect();
        if let Some(unknown) = names.iter().find(|n| !known.contains(*n)) {
            return Err(Error::Config(format!("cannot freeze unknown parameter '{unknown}'")));
        }
        self.frozen = names;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    /// He-uniform weights and zero biases for the layers selected by `which`
    /// (called with the layer index), drawn in layer order.
    pub fn init_params(&mut self, rng: &mut Rng, which: impl Fn(usize) -> bool) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if !which(i) {
                continue;
            }
            let (weight, bias, fan_in) = match layer {
                Layer::Conv2d(c) => {
                    let fan_in = c.in_channels() * c.kernel_size() * c.kernel_size();
                    (&mut c.kernel, &mut c.bias, fan_in)
                }
                Layer::Dense(d) => {
                    let fan_in = d.fan_in();
                    (&mut d.weight, &mut d.bias, fan_in)
                }
                _ => continue,
            };
            let bound = (6.0 / fan_in as f32).sqrt();
            *weight = Tensor::uniform(weight.shape(), -bound, bound, rng)?;
            *bias = Tensor::zeros(bias.shape())?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let ok = x.shape().len() == 4 && x.shape()[1..] == self.input_shape;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "network expects [b, {}, {}, {}] input, got {:?}",
                self.input_shape[0],
                self.input_shape[1],
                self.input_shape[2],
                x.shape()
            )))
        }
    }

    /// Index of the first layer owning a trainable parameter; backward stops there.
    fn first_trainable(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.params().iter().any(|(n, _)| !self.frozen.contains(n)))
    }

    /// Forward pass to the logits, keeping the caches backward needs.
    pub fn forward(&mut self, x: Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.check_input(&x)?;
        let start = self.first_trainable().unwrap_or(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(h, mode, rng, i >= start)?;
        }
        Ok(h)
    }

    /// Eval-mode forward pass; takes `&self` so weights can be shared.
    pub fn predict(&self, x: Tensor) -> Result<Tensor> {
        self.check_input(&x)?;
        self.layers.iter().try_fold(x, |h, layer| layer.infer(h))
    }

    pub fn loss(&self, logits: &Tensor, labels: &[usize]) -> Result<XentOutput> {
        softmax_xent(logits, labels)
    }

    /// Gradients of every trainable parameter given the gradient at the logits.
    pub fn backward(&mut self, grad_logits: Tensor) -> Result<NamedTensors> {
        let mut grads = NamedTensors::new();
        let Some(start) = self.first_trainable() else {
            return Ok(grads);
        };
        let mut grad = grad_logits;
        for i in (start..self.layers.len()).rev() {
            let out = self.layers[i].backward(grad, i > start)?;
            for (name, g) in out.params {
                if !self.frozen.contains(&name) {
                    grads.insert(name, g);
                }
            }
            match out.input {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok(grads)
    }

    /// One optimizer step over the trainable parameters.
    pub fn apply(&mut self, optimizer: &mut Optimizer, grads: &NamedTensors) -> Result<()> {
        let frozen = &self.frozen;
        let params = self.layers.iter_mut().flat_map(|l| l.params_mut());
        optimizer.apply(params, grads, frozen)
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    /// Shape of the feature map entering the head's flatten layer.
    fn feature_end(&self) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.kind() == LayerKind::Flatten)
            .ok_or_else(|| Error::Config("network has no flatten layer separating features from head".into()))
    }

    /// Number of dropout layers in the head.
    pub fn dropout_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.kind() == LayerKind::Dropout).count()
    }
}

/// Transfer-learning surgery: keeps the convolutional feature extractor,
/// freezes it, and replaces the fully connected head with a freshly
/// initialized one carrying `dropout_layers` dropout layers.
pub fn prepare_transfer(net: &Network, rng: &mut Rng, dropout_layers: u8) -> Result<Network> {
    if !(1..=2).contains(&dropout_layers) {
        return Err(Error::Config(format!(
            "dropout_layers must be 1 or 2, got {dropout_layers}"
        )));
    }
    let split = net.feature_end()?;
    let mut layers: Vec<Layer> = net.layers[..split].to_vec();
    for layer in &mut layers {
        layer.clear_cache();
    }
    let mut shape = net.input_shape.to_vec();
    for layer in &layers {
        shape = layer.output_shape(&shape)?;
    }
    let flat: usize = shape.iter().product();
    let denses: Vec<&Dense> = net.layers[split..]
        .iter()
        .filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
        .collect();
    let hidden = match denses.as_slice() {
        [first, _] => first.fan_out(),
        _ => {
            return Err(Error::Config(format!(
                "transfer expects a head with two dense layers, found {}",
                denses.len()
            )))
        }
    };
    let rate = net.layers[split..]
        .iter()
        .find_map(|l| match l {
            Layer::Dropout { rate, .. } => Some(*rate),
            _ => None,
        })
        .unwrap_or(0.2);
    let head_start = layers.len();
    layers.extend(head_layers(flat, hidden, net.num_classes(), dropout_layers, rate)?);
    let mut out = Network::from_layers(net.input_shape, layers)?;
    out.init_params(rng, |i| i >= head_start)?;
    let frozen = out.conv_param_names();
    out.set_frozen(frozen)?;
    Ok(out)
}
