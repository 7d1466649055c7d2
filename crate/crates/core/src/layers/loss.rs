use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct XentOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f32,
    pub probs: Tensor,
    /// Gradient of `loss` with respect to the logits: `(probs - one_hot) / b`.
    pub grad_logits: Tensor,
}

/// Row-wise softmax with max subtraction, evaluated in `f64`.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let &[_, k] = logits.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "softmax expects [b, k] logits, got {:?}",
            logits.shape()
        )));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Tensor::from_vec(logits.shape(), out)
}

pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<XentOutput> {
    let &[b, k] = logits.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "softmax_xent expects [b, k] logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let mut probs = Vec::with_capacity(b * k);
    let mut grad = Vec::with_capacity(b * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let shifted: Vec<f64> = row.iter().map(|&v| v as f64 - max).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        total += log_z - shifted[label];
        for (j, s) in shifted.iter().enumerate() {
            let p = (s - log_z).exp();
            probs.push(p as f32);
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(((p - target) / b as f64) as f32);
        }
    }
    Ok(XentOutput {
        loss: (total / b as f64) as f32,
        probs: Tensor::from_vec(&[b, k], probs)?,
        grad_logits: Tensor::from_vec(&[b, k], grad)?,
    })
}
