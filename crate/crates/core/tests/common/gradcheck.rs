//! Analytic gradients from the library against central differences of the
//! f64 oracle.
//!
//! Error metric: `|a - n| / max(|a|, |n|, FLOOR)`. The floor keeps components
//! whose true value is essentially zero from turning f32 round-off into a huge
//! relative error; with `FLOOR = 1e-4` such a component still has to agree to
//! an absolute 1e-7.

use cidis::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax_xent, Layer, Mode,
};
use cidis::model::{build, CidisConfig};
use cidis::rng::Rng;
use cidis::tensor::Tensor;

use super::oracle::{self, central_diff, Arr};

pub const FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const INSTANCES: usize = 20;
/// Step for functions linear in the perturbed argument.
const LINEAR_STEP: f64 = 1e-3;
/// Step for piecewise-smooth functions; small enough to rarely cross a kink.
const KINK_STEP: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst error seen over a set of instances.
#[derive(Clone, Copy, Debug, Default)]
pub struct Summary {
    pub instances: usize,
    pub compared: usize,
    pub max_rel_err: f64,
    /// Largest forward discrepancy between library and oracle.
    pub max_forward_err: f64,
}

impl Summary {
    fn absorb(&mut self, analytic: &[f32], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.iter().zip(numeric) {
            self.max_rel_err = self.max_rel_err.max(rel_err(a as f64, n));
        }
        self.compared += numeric.len();
    }

    fn forward(&mut self, lib: &[f32], reference: &[f64]) {
        assert_eq!(lib.len(), reference.len());
        for (&a, &b) in lib.iter().zip(reference) {
            self.max_forward_err = self.max_forward_err.max((a as f64 - b).abs());
        }
    }

    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.max_rel_err <= TOLERANCE && self.max_forward_err <= 1e-4
    }
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n).map(|_| (rng.normal() * scale) as f32).collect()
}

fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn weighted_sum(w: &[f64], y: &Arr) -> f64 {
    w.iter().zip(&y.data).map(|(a, b)| a * b).sum()
}

pub fn conv() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(1000 + inst as u64);
        let n = 1 + rng.below(2) as usize;
        let c = 1 + rng.below(3) as usize;
        let o = 1 + rng.below(3) as usize;
        let k = [1, 2, 3, 5][rng.below(4) as usize];
        let stride = 1 + rng.below(2) as usize;
        let pad = rng.below(k as u32) as usize;
        let h = k + rng.below(4) as usize;
        let w = k + rng.below(4) as usize;
        let (xs, ks) = ([n, c, h, w], [o, c, k, k]);
        let x = normal_vec(&mut rng, xs.iter().product(), 1.0);
        let kernel = normal_vec(&mut rng, ks.iter().product(), 0.5);
        let bias = normal_vec(&mut rng, o, 0.5);
        let (kt, bt) = (tensor(&ks, kernel.clone()), tensor(&[o], bias.clone()));
        let (y, cache) = conv2d_forward(&tensor(&xs, x.clone()), &kt, &bt, stride, pad).unwrap();
        let up = normal_vec(&mut rng, y.len(), 1.0);
        let g = conv2d_backward(&tensor(y.shape(), up.clone()), &cache, &kt).unwrap();

        let (x64, k64, b64, up64) = (to_f64(&x), to_f64(&kernel), to_f64(&bias), to_f64(&up));
        let reference = oracle::conv2d(&Arr::new(&xs, x64.clone()), &Arr::new(&ks, k64.clone()), &b64, stride, pad);
        s.forward(y.data(), &reference.data);
        let f_x = |v: &[f64]| {
            weighted_sum(&up64, &oracle::conv2d(&Arr::new(&xs, v.to_vec()), &Arr::new(&ks, k64.clone()), &b64, stride, pad))
        };
        let f_k = |v: &[f64]| {
            weighted_sum(&up64, &oracle::conv2d(&Arr::new(&xs, x64.clone()), &Arr::new(&ks, v.to_vec()), &b64, stride, pad))
        };
        let f_b = |v: &[f64]| {
            weighted_sum(&up64, &oracle::conv2d(&Arr::new(&xs, x64.clone()), &Arr::new(&ks, k64.clone()), v, stride, pad))
        };
        s.absorb(g.input.data(), &central_diff(&f_x, &x64, LINEAR_STEP));
        s.absorb(g.kernel.data(), &central_diff(&f_k, &k64, LINEAR_STEP));
        s.absorb(g.bias.data(), &central_diff(&f_b, &b64, LINEAR_STEP));
        s.instances += 1;
    }
    s
}

pub fn dense() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(2000 + inst as u64);
        let n = 1 + rng.below(4) as usize;
        let i = 1 + rng.below(8) as usize;
        let o = 1 + rng.below(6) as usize;
        let x = normal_vec(&mut rng, n * i, 1.0);
        let w = normal_vec(&mut rng, o * i, 0.5);
        let b = normal_vec(&mut rng, o, 0.5);
        let wt = tensor(&[o, i], w.clone());
        let (y, cache) = dense_forward(&tensor(&[n, i], x.clone()), &wt, &tensor(&[o], b.clone())).unwrap();
        let up = normal_vec(&mut rng, n * o, 1.0);
        let g = dense_backward(&tensor(&[n, o], up.clone()), &cache, &wt).unwrap();

        let (x64, w64, b64, up64) = (to_f64(&x), to_f64(&w), to_f64(&b), to_f64(&up));
        s.forward(y.data(), &oracle::dense(&Arr::new(&[n, i], x64.clone()), &Arr::new(&[o, i], w64.clone()), &b64).data);
        let f_x = |v: &[f64]| weighted_sum(&up64, &oracle::dense(&Arr::new(&[n, i], v.to_vec()), &Arr::new(&[o, i], w64.clone()), &b64));
        let f_w = |v: &[f64]| weighted_sum(&up64, &oracle::dense(&Arr::new(&[n, i], x64.clone()), &Arr::new(&[o, i], v.to_vec()), &b64));
        let f_b = |v: &[f64]| weighted_sum(&up64, &oracle::dense(&Arr::new(&[n, i], x64.clone()), &Arr::new(&[o, i], w64.clone()), v));
        s.absorb(g.input.data(), &central_diff(&f_x, &x64, LINEAR_STEP));
        s.absorb(g.weight.data(), &central_diff(&f_w, &w64, LINEAR_STEP));
        s.absorb(g.bias.data(), &central_diff(&f_b, &b64, LINEAR_STEP));
        s.instances += 1;
    }
    s
}

pub fn maxpool() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(3000 + inst as u64);
        let win = 2 + rng.below(2) as usize;
        let stride = 1 + rng.below(2) as usize;
        let shape = [1 + rng.below(2) as usize, 1 + rng.below(3) as usize, win + rng.below(5) as usize, win + rng.below(5) as usize];
        let x = normal_vec(&mut rng, shape.iter().product(), 1.0);
        let (y, cache) = maxpool2d_forward(&tensor(&shape, x.clone()), win, stride).unwrap();
        let up = normal_vec(&mut rng, y.len(), 1.0);
        let g = maxpool2d_backward(&tensor(y.shape(), up.clone()), &cache).unwrap();
        let (x64, up64) = (to_f64(&x), to_f64(&up));
        s.forward(y.data(), &oracle::maxpool(&Arr::new(&shape, x64.clone()), win, stride).data);
        let f = |v: &[f64]| weighted_sum(&up64, &oracle::maxpool(&Arr::new(&shape, v.to_vec()), win, stride));
        s.absorb(g.data(), &central_diff(&f, &x64, KINK_STEP));
        s.instances += 1;
    }
    s
}

pub fn relu() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(4000 + inst as u64);
        let len = 1 + rng.below(40) as usize;
        let x = normal_vec(&mut rng, len, 1.0);
        let (y, cache) = relu_forward(&tensor(&[len], x.clone()));
        let up = normal_vec(&mut rng, len, 1.0);
        let g = relu_backward(&tensor(&[len], up.clone()), &cache).unwrap();
        let (x64, up64) = (to_f64(&x), to_f64(&up));
        s.forward(y.data(), &oracle::relu(&Arr::new(&[len], x64.clone())).data);
        let f = |v: &[f64]| weighted_sum(&up64, &oracle::relu(&Arr::new(&[len], v.to_vec())));
        s.absorb(g.data(), &central_diff(&f, &x64, KINK_STEP));
        s.instances += 1;
    }
    s
}

/// Train-mode dropout is linear given its mask; the mask is read back from
/// the forward output and must hold only `0` or `1/(1-p)`.
pub fn dropout() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(5000 + inst as u64);
        let p = [0.2f32, 0.5, 0.7][inst % 3];
        let len = 1 + rng.below(60) as usize;
        let x: Vec<f32> = normal_vec(&mut rng, len, 1.0).into_iter().map(|v| if v == 0.0 { 1.0 } else { v }).collect();
        let (y, cache) = dropout_forward(&tensor(&[len], x.clone()), p, Mode::Train, &mut rng).unwrap();
        let keep = 1.0 / (1.0 - p as f64);
        let mask: Vec<f64> = y.data().iter().map(|&a| if a == 0.0 { 0.0 } else { keep }).collect();
        for (&a, &b) in y.data().iter().zip(&x) {
            assert!(a == 0.0 || ((a as f64) - b as f64 * keep).abs() < 1e-5);
        }
        let up = normal_vec(&mut rng, len, 1.0);
        let g = dropout_backward(&tensor(&[len], up.clone()), &cache).unwrap();
        let up64 = to_f64(&up);
        let reference: Vec<f64> = x.iter().zip(&mask).map(|(&v, m)| v as f64 * m).collect();
        s.forward(y.data(), &reference);
        let f = |v: &[f64]| v.iter().zip(&mask).zip(&up64).map(|((a, m), u)| a * m * u).sum::<f64>();
        s.absorb(g.data(), &central_diff(&f, &to_f64(&x), LINEAR_STEP));
        s.instances += 1;
    }
    s
}

/// Flatten through the layer interface: a pure reshape in both directions.
pub fn flatten() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(6000 + inst as u64);
        let shape = [1 + rng.below(3) as usize, 1 + rng.below(3) as usize, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize];
        let x = normal_vec(&mut rng, shape.iter().product(), 1.0);
        let mut layer = Layer::flatten();
        let y = layer.forward(tensor(&shape, x.clone()), Mode::Train, &mut rng, true).unwrap();
        assert_eq!(y.shape(), &[shape[0], shape[1] * shape[2] * shape[3]]);
        let up = normal_vec(&mut rng, y.len(), 1.0);
        let g = layer.backward(tensor(y.shape(), up.clone()), true).unwrap().input.unwrap();
        assert_eq!(g.shape(), shape.as_slice());
        s.forward(y.data(), &to_f64(&x));
        let up64 = to_f64(&up);
        let f = |v: &[f64]| v.iter().zip(&up64).map(|(a, b)| a * b).sum::<f64>();
        s.absorb(g.data(), &central_diff(&f, &to_f64(&x), LINEAR_STEP));
        s.instances += 1;
    }
    s
}

pub fn softmax_cross_entropy() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let mut rng = Rng::new(7000 + inst as u64);
        let n = 1 + rng.below(5) as usize;
        let k = 2 + rng.below(4) as usize;
        let z = normal_vec(&mut rng, n * k, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u32) as usize).collect();
        let out = softmax_xent(&tensor(&[n, k], z.clone()), &labels).unwrap();
        let z64 = to_f64(&z);
        let f = |v: &[f64]| oracle::xent(&Arr::new(&[n, k], v.to_vec()), &labels);
        s.forward(&[out.loss], &[f(&z64)]);
        s.absorb(out.grad_logits.data(), &central_diff(&f, &z64, KINK_STEP));
        s.instances += 1;
    }
    s
}

/// Shrunken CIDIS on 8x8 inputs, cross-entropy loss, every parameter checked.
pub fn end_to_end() -> Summary {
    let mut s = Summary::default();
    for inst in 0..INSTANCES {
        let arch = CidisConfig {
            input_size: 8,
            widths: [2, 3, 4],
            hidden: 5,
            dropout_layers: 1 + (inst % 2) as u8,
            ..CidisConfig::default()
        };
        let mut rng = Rng::new(8000 + inst as u64);
        let mut net = build(&arch, &mut rng).unwrap();
        // Nonzero biases so every parameter carries gradient signal.
        for (_, t) in net.params_mut() {
            for v in t.data_mut() {
                *v += (rng.normal() * 0.1) as f32;
            }
        }
        let n = 2;
        let x: Vec<f32> = (0..n * 3 * 64).map(|_| rng.uniform()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(4) as usize).collect();
        let logits = net.forward(tensor(&[n, 3, 8, 8], x.clone()), Mode::Eval, &mut rng).unwrap();
        let out = net.loss(&logits, &labels).unwrap();
        let grads = net.backward(out.grad_logits).unwrap();

        let xa = Arr::from_f32(&[n, 3, 8, 8], &x);
        let base: Vec<(String, Vec<f64>)> = net.params().iter().map(|(k, t)| (k.clone(), to_f64(t.data()))).collect();
        let lookup = |name: &str| base.iter().find(|(k, _)| k == name).unwrap().1.clone();
        s.forward(logits.data(), &oracle::network_logits(&net, &lookup, &xa).data);
        for (name, values) in &base {
            let f = |v: &[f64]| {
                let params = |p: &str| if p == name { v.to_vec() } else { lookup(p) };
                oracle::xent(&oracle::network_logits(&net, &params, &xa), &labels)
            };
            s.absorb(grads[name].data(), &central_diff(&f, values, KINK_STEP));
        }
        s.instances += 1;
    }
    s
}

/// Every check, labeled.
pub fn all() -> Vec<(&'static str, Summary)> {
    vec![
        ("conv2d", conv()),
        ("maxpool2d", maxpool()),
        ("dense", dense()),
        ("relu", relu()),
        ("dropout", dropout()),
        ("flatten", flatten()),
        ("softmax_xent", softmax_cross_entropy()),
        ("cidis_8x8", end_to_end()),
    ]
}
