//! Binary dataset cache used between CLI steps.
//!
//! Layout (little-endian): magic, version `u32`, count `u32`, then per sample
//! label `u8`, split `u8` (255 when unassigned), width `u32`, height `u32`,
//! provenance (`u32` length + UTF-8) and `width * height * 3` pixel bytes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::RgbImage;

use super::{Dataset, Sample, Split};
use crate::error::{io, Error, Result};
use crate::label::Level;

pub const DATASET_MAGIC: &[u8; 8] = b"CIDISDS\0";
pub const DATASET_VERSION: u32 = 1;

const UNASSIGNED: u8 = 255;

fn split_code(s: Option<Split>) -> u8 {
    match s {
        Some(Split::Train) => 0,
        Some(Split::Test) => 1,
        Some(Split::Validation) => 2,
        None => UNASSIGNED,
    }
}

pub(super) fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io(path, e));
    put(DATASET_MAGIC)?;
    put(&DATASET_VERSION.to_le_bytes())?;
    put(&(ds.len() as u32).to_le_bytes())?;
    for (i, s) in ds.samples().iter().enumerate() {
        let split = ds.split_assignment().map(|a| a[i]);
        put(&[s.label.index() as u8, split_code(split)])?;
        put(&s.image.width().to_le_bytes())?;
        put(&s.image.height().to_le_bytes())?;
        let prov = s.provenance.to_string();
        put(&(prov.len() as u32).to_le_bytes())?;
        put(prov.as_bytes())?;
        put(s.image.as_raw())?;
    }
    w.flush().map_err(|e| io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptData("dataset cache is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub(super) fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8).ok() != Some(DATASET_MAGIC.as_slice()) {
        return Err(Error::Format(format!("{} is not a dataset cache", path.display())));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset cache version {version}")));
    }
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    let mut splits = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label = Level::from_index(r.u8()? as usize).map_err(|e| Error::CorruptData(e.to_string()))?;
        let split = match r.u8()? {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            2 => Some(Split::Validation),
            UNASSIGNED => None,
            other => return Err(Error::CorruptData(format!("bad split code {other}"))),
        };
        let (w, h) = (r.u32()?, r.u32()?);
        let plen = r.u32()? as usize;
        let prov = std::str::from_utf8(r.take(plen)?)
            .map_err(|_| Error::CorruptData("provenance is not UTF-8".into()))?
            .parse()?;
        let npix = (w as usize)
            .checked_mul(h as usize)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::CorruptData("image extent overflows".into()))?;
        let image = RgbImage::from_raw(w, h, r.take(npix)?.to_vec())
            .ok_or_else(|| Error::CorruptData("pixel payload size".into()))?;
        samples.push(Sample {
            image,
            label,
            provenance: prov,
        });
        splits.push(split);
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptData("trailing bytes after dataset cache".into()));
    }
    if splits.iter().all(Option::is_some) && !splits.is_empty() {
        Dataset::with_split(samples, splits.into_iter().map(Option::unwrap).collect())
    } else if splits.iter().all(Option::is_none) {
        Ok(Dataset::new(samples))
    } else {
        Err(Error::CorruptData("split assignment covers only part of the dataset".into()))
    }
}
