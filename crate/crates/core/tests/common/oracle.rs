//! Naive f64 reference implementations: direct loops, no im2col, no gemm.

use cidis::layers::Layer;
use cidis::model::Network;

#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }
}

pub fn conv2d(x: &Arr, k: &Arr, b: &[f64], stride: usize, pad: usize) -> Arr {
    let [n, c, h, w] = x.shape[..] else { panic!("rank") };
    let [o, kc, kh, kw] = k.shape[..] else { panic!("rank") };
    assert_eq!(c, kc);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            for yi in 0..ho {
                for xi in 0..wo {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (yi * stride + dy) as isize - pad as isize;
                                let ix = (xi * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data[((oi * c + ci) * kh + dy) * kw + dx];
                                acc += xv * kv;
                            }
                        }
                    }
                    y[((ni * o + oi) * ho + yi) * wo + xi] = acc;
                }
            }
        }
    }
    Arr::new(&[n, o, ho, wo], y)
}

pub fn maxpool(x: &Arr, win: usize, stride: usize) -> Arr {
    let [n, c, h, w] = x.shape[..] else { panic!("rank") };
    let ho = (h - win) / stride + 1;
    let wo = (w - win) / stride + 1;
    let mut y = Vec::with_capacity(n * c * ho * wo);
    for nc in 0..n * c {
        for yi in 0..ho {
            for xi in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        m = m.max(x.data[(nc * h + yi * stride + dy) * w + xi * stride + dx]);
                    }
                }
                y.push(m);
            }
        }
    }
    Arr::new(&[n, c, ho, wo], y)
}

/// `y = x W^T + b` with `W: [out, in]`.
pub fn dense(x: &Arr, w: &Arr, b: &[f64]) -> Arr {
    let [n, i] = x.shape[..] else { panic!("rank") };
    let [o, wi] = w.shape[..] else { panic!("rank") };
    assert_eq!(i, wi);
    let mut y = vec![0.0; n * o];
    for ni in 0..n {
        for oi in 0..o {
            y[ni * o + oi] = b[oi] + (0..i).map(|k| x.data[ni * i + k] * w.data[oi * i + k]).sum::<f64>();
        }
    }
    Arr::new(&[n, o], y)
}

pub fn relu(x: &Arr) -> Arr {
    Arr::new(&x.shape, x.data.iter().map(|&v| v.max(0.0)).collect())
}

/// Mean softmax cross-entropy over the batch.
pub fn xent(logits: &Arr, labels: &[usize]) -> f64 {
    let [n, k] = logits.shape[..] else { panic!("rank") };
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &logits.data[r * k..(r + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / n as f64
}

/// Eval-mode forward through a network's layer list, reading parameters from
/// `params` (name -> values) instead of the network's own f32 tensors.
pub fn network_logits(net: &Network, params: &dyn Fn(&str) -> Vec<f64>, x: &Arr) -> Arr {
    let mut h = x.clone();
    for layer in net.layers() {
        h = match layer {
            Layer::Conv2d(c) => {
                let k = Arr::new(c.kernel.shape(), params(&format!("{}.weight", c.name)));
                conv2d(&h, &k, &params(&format!("{}.bias", c.name)), c.stride, c.padding)
            }
            Layer::Relu(_) => relu(&h),
            Layer::MaxPool2d { window, stride, .. } => maxpool(&h, *window, *stride),
            Layer::Flatten(_) => {
                let n = h.shape[0];
                let rest = h.data.len() / n;
                Arr::new(&[n, rest], h.data)
            }
            Layer::Dense(d) => {
                let w = Arr::new(d.weight.shape(), params(&format!("{}.weight", d.name)));
                dense(&h, &w, &params(&format!("{}.bias", d.name)))
            }
            Layer::Dropout { .. } | Layer::SoftmaxXent { .. } => h,
        };
    }
    h
}

/// Central difference of `f` with respect to every coordinate of `at`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|i| {
            probe[i] = at[i] + step;
            let up = f(&probe);
            probe[i] = at[i] - step;
            let down = f(&probe);
            probe[i] = at[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}
