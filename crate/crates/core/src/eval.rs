//! Accuracy, loss, confusion matrix, single-image latency and model size.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{batches, Dataset, Subset};
use crate::error::{Error, Result};
use crate::label::NUM_LEVELS;
use crate::layers::softmax_xent;
use crate::model::Network;
use crate::tensor::Tensor;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Rows are true levels, columns predicted levels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_LEVELS]; NUM_LEVELS],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_LEVELS).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    /// Rows joined by `;`, cells by `,`.
    pub fn to_compact(&self) -> String {
        self.counts
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Loss and accuracy over one subset.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub samples: usize,
    /// Mean cross-entropy; NaN for an empty subset.
    pub loss: f64,
    /// NaN for an empty subset.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Eval-mode metrics over `subset` in dataset order.
pub fn measure(net: &Network, dataset: &Dataset, subset: Subset, batch_size: usize) -> Result<Metrics> {
    if net.num_classes() != NUM_LEVELS {
        return Err(Error::Evaluation(format!(
            "network predicts {} classes, labels have {NUM_LEVELS}",
            net.num_classes()
        )));
    }
    let mut confusion = ConfusionMatrix::default();
    let mut loss_sum = 0.0f64;
    let mut n = 0usize;
    for batch in batches(dataset, subset, batch_size, None)? {
        let logits = net.predict(batch.images)?;
        let out = softmax_xent(&logits, &batch.labels)?;
        let b = batch.labels.len();
        loss_sum += out.loss as f64 * b as f64;
        n += b;
        for (row, &truth) in out.probs.data().chunks(NUM_LEVELS).zip(&batch.labels) {
            confusion.record(truth, argmax(row));
        }
    }
    Ok(Metrics {
        samples: n,
        loss: loss_sum / n as f64,
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Mean wall-clock milliseconds of one single-image forward pass, after
/// `warmup` untimed passes.
pub fn measure_latency(net: &Network, image: &Tensor, warmup: usize, runs: usize) -> Result<f64> {
    if runs == 0 {
        return Err(Error::Evaluation("latency needs at least one timed run".into()));
    }
    for _ in 0..warmup {
        net.predict(image.clone())?;
    }
    let start = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(net.predict(image.clone())?);
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / runs as f64)
}

/// Serialized weight payload in megabytes (10^6 bytes).
pub fn model_size_mb(net: &Network) -> f64 {
    net.weight_bytes() as f64 / 1e6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub warmup: usize,
    pub timed_runs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 50,
            warmup: 10,
            timed_runs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub subset: Subset,
    pub metrics: Metrics,
    pub latency_ms: f64,
    pub size_mb: f64,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }

    /// `key = value` lines; latency is last so the rest can be compared verbatim.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.metrics;
        let _ = writeln!(out, "subset = {}", self.subset);
        let _ = writeln!(out, "samples = {}", m.samples);
        let _ = writeln!(out, "accuracy = {:.6}", m.accuracy);
        let _ = writeln!(out, "loss = {:.6}", m.loss);
        let _ = writeln!(out, "confusion = {}", m.confusion.to_compact());
        let _ = writeln!(out, "size_mb = {:.6}", self.size_mb);
        let _ = writeln!(out, "latency_ms = {:.4}", self.latency_ms);
        out
    }
}

/// Full evaluation of `net` on `subset`. The latency probe uses the first
/// sample of the subset.
pub fn evaluate(net: &Network, dataset: &Dataset, subset: Subset, opts: &EvalOptions) -> Result<EvalReport> {
    let metrics = measure(net, dataset, subset, opts.batch_size)?;
    if metrics.samples == 0 {
        return Err(Error::EmptyDataset(format!("subset '{subset}' has no samples")));
    }
    let probe = batches(dataset, subset, 1, None)?
        .next()
        .expect("non-empty subset yields a batch")
        .images;
    Ok(EvalReport {
        subset,
        latency_ms: measure_latency(net, &probe, opts.warmup, opts.timed_runs)?,
        size_mb: model_size_mb(net),
        metrics,
    })
}
