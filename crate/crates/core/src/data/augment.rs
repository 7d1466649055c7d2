use std::fmt;
use std::str::FromStr;

use image::imageops;

use super::{Dataset, Provenance, Sample, Split};
use crate::error::{Error, Result};

/// Lossless quarter-turn rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rotation {
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 3] = [Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn apply(self, sample: &Sample) -> Sample {
        let image = match self {
            Rotation::R90 => imageops::rotate90(&sample.image),
            Rotation::R180 => imageops::rotate180(&sample.image),
            Rotation::R270 => imageops::rotate270(&sample.image),
        };
        Sample {
            image,
            label: sample.label,
            provenance: Provenance::Rotated {
                degrees: self.degrees(),
                source: Box::new(sample.provenance.clone()),
            },
        }
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

impl FromStr for Rotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "90" => Ok(Rotation::R90),
            "180" => Ok(Rotation::R180),
            "270" => Ok(Rotation::R270),
            other => Err(Error::Config(format!(
                "unsupported rotation '{other}' (expected 90, 180 or 270)"
            ))),
        }
    }
}

/// Each original followed by one rotated copy per turn. Split labels are inherited.
pub fn augment_rotations(dataset: &Dataset, turns: &[Rotation]) -> Dataset {
    expand(dataset, turns, |_| true)
}

/// Rotated copies for training samples only, so that no rotation of an
/// evaluation image leaks into training.
pub fn augment_train_split(dataset: &Dataset, turns: &[Rotation]) -> Result<Dataset> {
    let assignment = dataset
        .split_assignment()
        .ok_or_else(|| Error::Contract("augmenting the training split needs a split assignment".into()))?;
    Ok(expand(dataset, turns, |i| assignment[i] == Split::Train))
}

fn expand(dataset: &Dataset, turns: &[Rotation], select: impl Fn(usize) -> bool) -> Dataset {
    let mut samples = Vec::with_capacity(dataset.len() * (1 + turns.len()));
    let mut split = dataset.split_assignment().map(|_| Vec::with_capacity(samples.capacity()));
    for (i, sample) in dataset.samples().iter().enumerate() {
        let copies: &[Rotation] = if select(i) { turns } else { &[] };
        samples.push(sample.clone());
        samples.extend(copies.iter().map(|r| r.apply(sample)));
        if let (Some(out), Some(src)) = (split.as_mut(), dataset.split_assignment()) {
            out.extend(std::iter::repeat_n(src[i], 1 + copies.len()));
        }
    }
    Dataset { samples, split }
}
