//! Hyperparameter grid over a shared stage-1 network.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{Stage, TrainConfig};
use crate::data::{Dataset, Subset};
use crate::error::{io, Error, Result};
use crate::eval::{evaluate, measure, EvalOptions, EvalReport, Metrics};
use crate::model::{Checkpoint, Network};
use crate::train::{train_from_scratch, transfer, RunLog};

#[derive(Clone, Debug)]
pub struct CellReport {
    pub config: TrainConfig,
    pub test: EvalReport,
    pub validation: Metrics,
    pub log: RunLog,
    pub checkpoint: Checkpoint,
}

impl CellReport {
    /// Config echo, then metrics; latency is the final line.
    pub fn to_text(&self) -> String {
        let mut out = self.config.to_text();
        out.push_str("status = ok\n");
        let _ = writeln!(out, "val_accuracy = {:.6}", self.validation.accuracy);
        let _ = writeln!(out, "val_loss = {:.6}", self.validation.loss);
        out.push_str(&self.test.to_text());
        out
    }
}

#[derive(Clone, Debug)]
pub enum CellOutcome {
    Done(Box<CellReport>),
    Failed { config: TrainConfig, error: String },
}

impl CellOutcome {
    pub fn id(&self) -> &str {
        match self {
            CellOutcome::Done(r) => &r.config.id,
            CellOutcome::Failed { config, .. } => &config.id,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GridReport {
    pub outcomes: Vec<CellOutcome>,
}

impl GridReport {
    pub const CSV_HEADER: &'static str =
        "config_id,accuracy,loss,latency_ms,size_mb,epochs,optimizer,lr,dropout_layers,batch_size,seed,val_accuracy,val_loss";

    /// Completed cells by test accuracy (descending), ties by id.
    pub fn ranked(&self) -> Vec<&CellReport> {
        let mut done: Vec<&CellReport> = self
            .outcomes
            .iter()
            .filter_map(|o| match o {
                CellOutcome::Done(r) => Some(r.as_ref()),
                CellOutcome::Failed { .. } => None,
            })
            .collect();
        done.sort_by(|a, b| {
            b.test
                .accuracy()
                .total_cmp(&a.test.accuracy())
                .then_with(|| a.config.id.cmp(&b.config.id))
        });
        done
    }

    pub fn best(&self) -> Option<&CellReport> {
        self.ranked().into_iter().next()
    }

    pub fn failures(&self) -> impl Iterator<Item = (&TrainConfig, &str)> {
        self.outcomes.iter().filter_map(|o| match o {
            CellOutcome::Failed { config, error } => Some((config, error.as_str())),
            CellOutcome::Done(_) => None,
        })
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in self.ranked() {
            let c = &r.config;
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.4},{:.6},{},{},{},{},{},{},{:.6},{:.6}",
                c.id,
                r.test.metrics.accuracy,
                r.test.metrics.loss,
                r.test.latency_ms,
                r.test.size_mb,
                c.epochs,
                c.optimizer,
                c.lr,
                c.dropout_layers,
                c.batch_size,
                c.seed,
                r.validation.accuracy,
                r.validation.loss
            );
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<16} {:>9} {:>9} {:>8} {:>6} {:>9} {:>9} {:>3} {:>5} {:>8}",
            "rank", "config", "accuracy", "loss", "val_acc", "epochs", "optimizer", "lr", "do", "batch", "lat_ms"
        );
        for (i, r) in self.ranked().iter().enumerate() {
            let c = &r.config;
            let _ = writeln!(
                out,
                "{:<4} {:<16} {:>9.4} {:>9.4} {:>8.4} {:>6} {:>9} {:>9} {:>3} {:>5} {:>8.3}",
                i + 1,
                c.id,
                r.test.metrics.accuracy,
                r.test.metrics.loss,
                r.validation.accuracy,
                c.epochs,
                c.optimizer.as_str(),
                c.lr,
                c.dropout_layers,
                c.batch_size,
                r.test.latency_ms
            );
        }
        for (c, e) in self.failures() {
            let _ = writeln!(out, "FAILED {}: {e}", c.id);
        }
        if let Some(best) = self.best() {
            let _ = writeln!(out, "best = {}", best.config.id);
        }
        out
    }
}

fn run_cell(cfg: &TrainConfig, stage1: &Network, real: &Dataset, opts: &EvalOptions) -> Result<CellReport> {
    let (checkpoint, log) = match cfg.stage {
        Stage::Cnn2 => transfer(stage1, real, cfg)?,
        Stage::ScratchReal => train_from_scratch(real, cfg)?,
        Stage::Cnn1 => {
            return Err(Error::Config(format!(
                "grid cell '{}' must be a cnn2 or scratch-real run",
                cfg.id
            )))
        }
    };
    let net = checkpoint.network();
    let test = evaluate(net, real, Subset::Test, opts)?;
    let validation = measure(net, real, Subset::Validation, opts.batch_size)?;
    Ok(CellReport {
        config: cfg.clone(),
        test,
        validation,
        log,
        checkpoint,
    })
}

/// Trains and evaluates every cell independently.
///
/// A failing cell is recorded and the rest still run. With `out_dir`, each
/// cell writes `<id>.report.txt`, `<id>.log.csv` and `<id>.ckpt`, and the
/// grid writes `summary.csv` and `summary.txt`.
pub fn run_grid(
    cells: &[TrainConfig],
    stage1: &Network,
    real: &Dataset,
    out_dir: Option<&Path>,
    opts: &EvalOptions,
) -> Result<GridReport> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let mut report = GridReport::default();
    for cfg in cells {
        log::info!("grid cell {}", cfg.id);
        let outcome = match run_cell(cfg, stage1, real, opts) {
            Ok(r) => CellOutcome::Done(Box::new(r)),
            Err(e) => {
                log::warn!("grid cell {} failed: {e}", cfg.id);
                CellOutcome::Failed {
                    config: cfg.clone(),
                    error: e.to_string(),
                }
            }
        };
        if let Some(dir) = out_dir {
            write_cell(dir, &outcome)?;
        }
        report.outcomes.push(outcome);
    }
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| io(&p, e))
        };
        write("summary.csv", report.summary_csv())?;
        write("summary.txt", report.summary_text())?;
    }
    Ok(report)
}

fn write_cell(dir: &Path, outcome: &CellOutcome) -> Result<()> {
    let id = outcome.id();
    let report_path = dir.join(format!("{id}.report.txt"));
    let text = match outcome {
        CellOutcome::Done(r) => {
            r.log.write_csv(&dir.join(format!("{id}.log.csv")))?;
            r.checkpoint.save(dir.join(format!("{id}.ckpt")))?;
            r.to_text()
        }
        CellOutcome::Failed { config, error } => format!("{}status = failed\nerror = {error}\n", config.to_text()),
    };
    fs::write(&report_path, text).map_err(|e| io(&report_path, e))
}
