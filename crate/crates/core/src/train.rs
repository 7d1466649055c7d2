//! Mini-batch training with per-epoch validation, plus the two-stage
//! synthetic-then-real transfer pipeline.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::{Stage, TrainConfig};
use crate::data::{augment_train_split, batches, Dataset, Subset};
use crate::error::{io, Error, Result};
use crate::eval::{argmax, measure};
use crate::layers::Mode;
use crate::model::{build, prepare_transfer, Checkpoint, Network, TrainingMeta};
use crate::optim::Optimizer;
use crate::rng::{mix_seed, Rng};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// NaN when the validation split is empty.
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub config_id: String,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| io(path, e))
    }
}

/// Trains `net` in place on the training split of `data`.
///
/// Every epoch visits a fresh seeded permutation of the training split and
/// then measures the validation split in eval mode. A non-finite batch loss
/// aborts with [`Error::Diverged`].
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    cfg.validate()?;
    let data: Cow<Dataset> = if cfg.augment.is_empty() {
        Cow::Borrowed(data)
    } else {
        Cow::Owned(augment_train_split(data, &cfg.augment)?)
    };
    let train_idx = data.indices(Subset::Train)?;
    if train_idx.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let side = net.input_shape()[1];
    if data.image_side() != Some(side) {
        return Err(Error::ShapeMismatch(format!(
            "network expects {side}x{side} images, dataset holds {:?}",
            data.image_side()
        )));
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut log = RunLog {
        config_id: cfg.id.clone(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let order_seed = mix_seed(mix_seed(cfg.seed, SHUFFLE_STREAM), epoch as u64);
        let mut dropout_rng = Rng::new(mix_seed(mix_seed(cfg.seed, DROPOUT_STREAM), epoch as u64));
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (b, batch) in batches(&data, Subset::Train, cfg.batch_size, Some(order_seed))?.enumerate() {
            let logits = net.forward(batch.images, Mode::Train, &mut dropout_rng)?;
            let out = net.loss(&logits, &batch.labels)?;
            if !out.loss.is_finite() {
                net.clear_caches();
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            let n = batch.labels.len();
            loss_sum += out.loss as f64 * n as f64;
            seen += n;
            correct += out
                .probs
                .data()
                .chunks(net.num_classes())
                .zip(&batch.labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let grads = net.backward(out.grad_logits)?;
            net.apply(&mut optimizer, &grads)?;
        }
        net.clear_caches();
        if net.params().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: train_idx.len().div_ceil(cfg.batch_size),
            });
        }
        let val = measure(net, &data, Subset::Validation, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            cfg.id,
            cfg.epochs,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        log.epochs.push(record);
    }
    let meta = TrainingMeta {
        epochs: cfg.epochs as u32,
        seed: cfg.seed,
        optimizer: cfg.optimizer.to_string(),
    };
    Ok((Checkpoint::new(net, meta), log))
}

/// Fresh network from `cfg.arch()`, initialized from `cfg.seed`.
pub fn initial_network(cfg: &TrainConfig) -> Result<Network> {
    build(&cfg.arch(), &mut Rng::derive(cfg.seed, INIT_STREAM))
}

/// Stage 1 or the from-scratch baseline: all layers trainable.
pub fn train_from_scratch(data: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    if cfg.stage == Stage::Cnn2 {
        return Err(Error::Config(format!("config '{}' is a transfer run", cfg.id)));
    }
    let mut net = initial_network(cfg)?;
    train(&mut net, data, cfg)
}

/// Stage 2: frozen stage-1 features, new head trained on `data`.
pub fn transfer(stage1: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    let mut net = prepare_transfer(stage1, &mut Rng::derive(cfg.seed, INIT_STREAM), cfg.dropout_layers)?;
    train(&mut net, data, cfg)
}

#[derive(Clone, Debug)]
pub struct TwoStage {
    pub stage1: Checkpoint,
    pub log1: RunLog,
    pub stage2: Checkpoint,
    pub log2: RunLog,
}

/// Trains on synthetic images, then transfers the frozen features to real images.
pub fn run_stage1_stage2(synthetic: &Dataset, real: &Dataset, cfg1: &TrainConfig, cfg2: &TrainConfig) -> Result<TwoStage> {
    let (stage1, log1) = train_from_scratch(synthetic, cfg1)?;
    let (stage2, log2) = transfer(stage1.network(), real, cfg2)?;
    Ok(TwoStage {
        stage1,
        log1,
        stage2,
        log2,
    })
}
