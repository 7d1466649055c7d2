//! `key = value` run descriptions. A grid file holds several blocks
//! separated by blank lines; `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::data::Rotation;
use crate::error::{Error, Result};
use crate::model::CidisConfig;
use crate::optim::OptimizerKind;

/// Which of the three training regimes a run belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Full network on synthetic images.
    Cnn1,
    /// Head-only training on real images over a frozen stage-1 feature extractor.
    Cnn2,
    /// Full network on real images from random initialization.
    ScratchReal,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Cnn1 => "cnn1",
            Stage::Cnn2 => "cnn2",
            Stage::ScratchReal => "scratch-real",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn1" => Ok(Stage::Cnn1),
            "cnn2" => Ok(Stage::Cnn2),
            "scratch-real" => Ok(Stage::ScratchReal),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }
}

/// Everything that defines one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub id: String,
    pub stage: Stage,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub dropout_layers: u8,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_size: usize,
    pub widths: [usize; 3],
    pub hidden: usize,
    /// Quarter turns added to the training split.
    pub augment: Vec<Rotation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = CidisConfig::default();
        Self {
            id: "run".into(),
            stage: Stage::Cnn1,
            optimizer: OptimizerKind::Adagrad,
            lr: 0.001,
            dropout_layers: 1,
            batch_size: 50,
            epochs: 50,
            seed: 0,
            input_size: arch.input_size,
            widths: arch.widths,
            hidden: arch.hidden,
            augment: Vec::new(),
        }
    }
}

const KEYS: [&str; 12] = [
    "id",
    "stage",
    "optimizer",
    "lr",
    "dropout_layers",
    "batch_size",
    "epochs",
    "seed",
    "input_size",
    "widths",
    "hidden",
    "augment",
];

impl TrainConfig {
    /// Network geometry implied by this run.
    pub fn arch(&self) -> CidisConfig {
        CidisConfig {
            input_size: self.input_size,
            widths: self.widths,
            hidden: self.hidden,
            dropout_layers: self.dropout_layers,
            ..CidisConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(|c: char| c.is_whitespace() || c == '/' || c == ',') {
            return Err(Error::Config(format!("config id '{}' must be a plain token", self.id)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(1..=2).contains(&self.dropout_layers) {
            return Err(Error::Config(format!("dropout_layers must be 1 or 2, got {}", self.dropout_layers)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.input_size < 8 || self.widths.contains(&0) || self.hidden == 0 {
            return Err(Error::Config("input_size >= 8 and positive widths/hidden required".into()));
        }
        Ok(())
    }

    /// Builds a config from one block. Missing keys keep their defaults,
    /// except that `lr` falls back to the optimizer's default rate and
    /// `widths` to the geometry scaled for `input_size`.
    pub fn from_block(block: &Block) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, _) in &block.entries {
            if !KEYS.contains(&key.as_str()) {
                return Err(block.error(key, "unknown key"));
            }
        }
        let field = |k: &str| block.get(k);
        let parse = |k: &str, v: &str| -> Result<u64> { v.parse().map_err(|_| block.error(k, "expected an integer")) };
        if let Some(v) = field("id") {
            cfg.id = v.to_string();
        }
        if let Some(v) = field("stage") {
            cfg.stage = v.parse()?;
        }
        if let Some(v) = field("optimizer") {
            cfg.optimizer = v.parse()?;
        }
        cfg.lr = match field("lr") {
            Some(v) => v.parse().map_err(|_| block.error("lr", "expected a number"))?,
            None => cfg.optimizer.default_lr(),
        };
        if let Some(v) = field("dropout_layers") {
            cfg.dropout_layers = u8::try_from(parse("dropout_layers", v)?)
                .map_err(|_| block.error("dropout_layers", "out of range"))?;
        }
        if let Some(v) = field("batch_size") {
            cfg.batch_size = parse("batch_size", v)? as usize;
        }
        if let Some(v) = field("epochs") {
            cfg.epochs = parse("epochs", v)? as usize;
        }
        if let Some(v) = field("seed") {
            cfg.seed = parse("seed", v)?;
        }
        if let Some(v) = field("input_size") {
            cfg.input_size = parse("input_size", v)? as usize;
            cfg.widths = CidisConfig::scaled(cfg.input_size).widths;
        }
        if let Some(v) = field("widths") {
            let w: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| block.error("widths", "expected three comma-separated integers"))?;
            cfg.widths = w
                .try_into()
                .map_err(|_| block.error("widths", "expected three comma-separated integers"))?;
        }
        if let Some(v) = field("hidden") {
            cfg.hidden = parse("hidden", v)? as usize;
        }
        if let Some(v) = field("augment") {
            cfg.augment = if v == "none" {
                Vec::new()
            } else {
                v.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a file holding exactly one block.
    pub fn parse(text: &str) -> Result<Self> {
        match parse_blocks(text)?.as_slice() {
            [block] => Self::from_block(block),
            blocks => Err(Error::Config(format!("expected one config block, found {}", blocks.len()))),
        }
    }

    /// `key = value` lines that parse back to the same config.
    pub fn to_text(&self) -> String {
        let augment = if self.augment.is_empty() {
            "none".to_string()
        } else {
            self.augment.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
        };
        let [w0, w1, w2] = self.widths;
        format!(
            "id = {}\nstage = {}\noptimizer = {}\nlr = {}\ndropout_layers = {}\nbatch_size = {}\nepochs = {}\n\
             seed = {}\ninput_size = {}\nwidths = {w0},{w1},{w2}\nhidden = {}\naugment = {augment}\n",
            self.id,
            self.stage,
            self.optimizer,
            self.lr,
            self.dropout_layers,
            self.batch_size,
            self.epochs,
            self.seed,
            self.input_size,
            self.hidden,
        )
    }
}

/// One block of `key = value` lines, with the line each key came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Block {
    pub entries: Vec<(String, String)>,
    lines: BTreeMap<String, usize>,
}

impl Block {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn error(&self, key: &str, msg: &str) -> Error {
        let line = self.lines.get(key).copied().unwrap_or(0);
        Error::Config(format!("line {line}: '{key}': {msg}"))
    }
}

pub fn parse_blocks(text: &str) -> Result<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut current = Block::default();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        if raw.trim().is_empty() {
            if !current.entries.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {lineno}: expected 'key = value'")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if current.lines.insert(k.clone(), lineno).is_some() {
            return Err(Error::Config(format!("line {lineno}: duplicate key '{k}'")));
        }
        current.entries.push((k, v));
    }
    if !current.entries.is_empty() {
        blocks.push(current);
    }
    Ok(blocks)
}

/// Parses a grid file; every block is one cell and ids must be unique.
pub fn parse_grid(text: &str) -> Result<Vec<TrainConfig>> {
    let cells = parse_blocks(text)?
        .iter()
        .map(TrainConfig::from_block)
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::Config("grid file defines no cells".into()));
    }
    let mut seen = BTreeSet::new();
    for c in &cells {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Config(format!("duplicate config id '{}'", c.id)));
        }
    }
    Ok(cells)
}
