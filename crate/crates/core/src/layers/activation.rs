use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Mode;

#[derive(Clone, Debug)]
pub struct ReluCache {
    positive: Vec<bool>,
    shape: Vec<usize>,
}

pub fn relu_forward(x: &Tensor) -> (Tensor, ReluCache) {
    let positive: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    let y = relu(x);
    (
        y,
        ReluCache {
            positive,
            shape: x.shape().to_vec(),
        },
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("shape unchanged")
}

pub fn relu_backward(grad_out: &Tensor, cache: &ReluCache) -> Result<Tensor> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::Contract(format!(
            "relu grad_out {:?} vs cached {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(&cache.positive)
        .map(|(&g, &p)| if p { g } else { 0.0 })
        .collect();
    Tensor::from_vec(&cache.shape, data)
}

/// Inverted-dropout state. `mask` holds the per-element scale (0 or `1/(1-p)`)
/// in train mode and is absent in eval mode.
#[derive(Clone, Debug)]
pub struct DropoutCache {
    mask: Option<Vec<f32>>,
    shape: Vec<usize>,
}

pub fn check_rate(p: f32) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidRate(p))
    }
}

pub fn dropout_forward(x: &Tensor, p: f32, mode: Mode, rng: &mut Rng) -> Result<(Tensor, DropoutCache)> {
    check_rate(p)?;
    let shape = x.shape().to_vec();
    if mode == Mode::Eval {
        return Ok((x.clone(), DropoutCache { mask: None, shape }));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.len())
        .map(|_| if rng.uniform() >= p { keep_scale } else { 0.0 })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::from_vec(&shape, data)?, DropoutCache { mask: Some(mask), shape }))
}

pub fn dropout_backward(grad_out: &Tensor, cache: &DropoutCache) -> Result<Tensor> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::Contract(format!(
            "dropout grad_out {:?} vs cached {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    match &cache.mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
            Tensor::from_vec(&cache.shape, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(&[2], vec![0.5, 3.0]).unwrap();
        assert!(relu(&pos).bit_eq(&pos));
    }

    #[test]
    fn relu_backward_masks() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (_, cache) = relu_forward(&x);
        let g = relu_backward(&Tensor::filled(&[3], 5.0).unwrap(), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut rng = Rng::new(0);
        let x = Tensor::uniform(&[64], -1.0, 1.0, &mut rng).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert!(y.bit_eq(&x));
        let (y, _) = dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn dropout_preserves_mean() {
        let x = Tensor::filled(&[100_000], 1.0).unwrap();
        let (y, _) = dropout_forward(&x, 0.2, Mode::Train, &mut Rng::new(11)).unwrap();
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let x = Tensor::zeros(&[2]).unwrap();
        let mut rng = Rng::new(0);
        assert!(matches!(dropout_forward(&x, 1.0, Mode::Train, &mut rng), Err(Error::InvalidRate(_))));
        assert!(matches!(dropout_forward(&x, -0.1, Mode::Eval, &mut rng), Err(Error::InvalidRate(_))));
    }

    #[test]
    fn dropout_backward_uses_mask() {
        let x = Tensor::filled(&[1000], 1.0).unwrap();
        let (y, cache) = dropout_forward(&x, 0.3, Mode::Train, &mut Rng::new(4)).unwrap();
        let g = dropout_backward(&Tensor::filled(&[1000], 1.0).unwrap(), &cache).unwrap();
        assert!(g.bit_eq(&y));
    }
}
