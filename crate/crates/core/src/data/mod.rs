//! Labeled image collections: ingestion, normalization, augmentation,
//! stratified splitting and batching.

mod augment;
mod cache;
mod ingest;
mod split;

pub use augment::{augment_rotations, augment_train_split, Rotation};
pub use ingest::{ingest_real, read_exclusions, SkipReport};
pub use split::{split, split_assignment, SplitPlan};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::label::{Level, NUM_LEVELS};
use crate::rng::Rng;
use crate::synth::SceneConfig;
use crate::tensor::Tensor;

/// Where a sample came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic(SceneConfig),
    File(PathBuf),
    Rotated { degrees: u16, source: Box<Provenance> },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Synthetic(cfg) => write!(f, "synthetic {cfg}"),
            Provenance::File(path) => write!(f, "file {}", path.display()),
            Provenance::Rotated { degrees, source } => write!(f, "rotated {degrees} {source}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(' ').unwrap_or((s, ""));
        match kind {
            "synthetic" => Ok(Provenance::Synthetic(rest.parse()?)),
            "file" => Ok(Provenance::File(PathBuf::from(rest))),
            "rotated" => {
                let (deg, inner) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::CorruptData(format!("bad provenance '{s}'")))?;
                Ok(Provenance::Rotated {
                    degrees: deg
                        .parse()
                        .map_err(|_| Error::CorruptData(format!("bad rotation in '{s}'")))?,
                    source: Box::new(inner.parse()?),
                })
            }
            _ => Err(Error::CorruptData(format!("unknown provenance '{s}'"))),
        }
    }
}

/// One labeled RGB image.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: RgbImage,
    pub label: Level,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

/// Which samples an operation runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
    Validation,
    All,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Test => "test",
            Subset::Validation => "validation",
            Subset::All => "all",
        }
    }

    fn split(self) -> Option<Split> {
        match self {
            Subset::Train => Some(Split::Train),
            Subset::Test => Some(Split::Test),
            Subset::Validation => Some(Split::Validation),
            Subset::All => None,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Subset::Train),
            "test" => Ok(Subset::Test),
            "validation" | "val" => Ok(Subset::Validation),
            "all" => Ok(Subset::All),
            other => Err(Error::Config(format!("unknown subset '{other}'"))),
        }
    }
}

/// An indexed sample collection with an optional train/test/validation assignment.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Option<Vec<Split>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples, split: None }
    }

    pub fn with_split(samples: Vec<Sample>, split: Vec<Split>) -> Result<Self> {
        if split.len() != samples.len() {
            return Err(Error::Contract(format!(
                "{} split entries for {} samples",
                split.len(),
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            split: Some(split),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Level> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_LEVELS] {
        let mut counts = [0; NUM_LEVELS];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn split_assignment(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    /// Sample indices in `subset`, ascending.
    pub fn indices(&self, subset: Subset) -> Result<Vec<usize>> {
        match (subset.split(), &self.split) {
            (None, _) => Ok((0..self.samples.len()).collect()),
            (Some(want), Some(assignment)) => Ok(assignment
                .iter()
                .enumerate()
                .filter(|(_, &s)| s == want)
                .map(|(i, _)| i)
                .collect()),
            (Some(_), None) => Err(Error::Contract(format!(
                "subset '{subset}' requested from a dataset without split assignment"
            ))),
        }
    }

    /// Side length shared by every (square) image, if there is one.
    pub fn image_side(&self) -> Option<usize> {
        let first = self.samples.first()?;
        let side = first.image.width();
        let uniform = self
            .samples
            .iter()
            .all(|s| s.image.width() == side && s.image.height() == side);
        uniform.then_some(side as usize)
    }

    pub fn save_cache(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        cache::save(self, path.as_ref())
    }

    pub fn load_cache(path: impl AsRef<std::path::Path>) -> Result<Self> {
        cache::load(path.as_ref())
    }
}

/// Scales 8-bit RGB into `[0, 1]`, channel-major `[3, side, side]`.
pub fn normalize(image: &RgbImage) -> Result<Tensor> {
    normalize_sized(image, 224)
}

/// As [`normalize`] for a `side x side` image.
pub fn normalize_sized(image: &RgbImage, side: usize) -> Result<Tensor> {
    let mut out = vec![0.0f32; 3 * side * side];
    write_normalized(image, side, &mut out)?;
    Tensor::from_vec(&[3, side, side], out)
}

fn write_normalized(image: &RgbImage, side: usize, out: &mut [f32]) -> Result<()> {
    if image.width() as usize != side || image.height() as usize != side {
        return Err(Error::ShapeMismatch(format!(
            "expected a {side}x{side} image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let plane = side * side;
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(())
}

/// One mini-batch ready for the network.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[b, 3, side, side]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

/// Streams a subset in batches; the final batch may be short.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    side: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let plane = 3 * self.side * self.side;
        let mut data = vec![0.0f32; indices.len() * plane];
        for (slot, &i) in indices.iter().enumerate() {
            write_normalized(&self.dataset.samples[i].image, self.side, &mut data[slot * plane..(slot + 1) * plane])
                .expect("sizes checked when the stream was created");
        }
        let labels = indices.iter().map(|&i| self.dataset.samples[i].label.index()).collect();
        Some(Batch {
            images: Tensor::from_vec(&[indices.len(), 3, self.side, self.side], data)
                .expect("batch is non-empty"),
            labels,
            indices,
        })
    }
}

/// Batches over `subset`. With `shuffle_seed` the order is a seeded
/// permutation; without it, ascending index order.
pub fn batches(dataset: &Dataset, subset: Subset, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order = dataset.indices(subset)?;
    let side = match order.first() {
        Some(&i) => dataset.samples[i].image.width() as usize,
        None => 0,
    };
    if let Some(&bad) = order.iter().find(|&&i| {
        let img = &dataset.samples[i].image;
        img.width() as usize != side || img.height() as usize != side
    }) {
        let img = &dataset.samples[bad].image;
        return Err(Error::ShapeMismatch(format!(
            "sample {bad} is {}x{}, batch expects {side}x{side}",
            img.width(),
            img.height()
        )));
    }
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    Ok(Batches {
        dataset,
        order,
        batch_size,
        side,
        pos: 0,
    })
}
