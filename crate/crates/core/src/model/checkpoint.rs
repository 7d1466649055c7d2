//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes   "CIDISCKP"
//! version      u32       1
//! fingerprint  u64       architecture hash of the manifest below
//! manifest     u32 len + UTF-8 (input shape line, then one line per layer)
//! epochs       u32
//! seed         u64
//! optimizer    u32 len + UTF-8
//! frozen       u32 count, then u32 len + UTF-8 per name
//! tensors      u32 count, then per tensor: u32 len + UTF-8 name,
//!              u64 byte length, tensor encoding
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense, Layer};
use crate::tensor::Tensor;

use super::Network;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CIDISCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub seed: u64,
    pub optimizer: String,
}

/// A persisted network: manifest, frozen set, weights and training metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    network: Network,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn field<'a>(tokens: &'a [&str], key: &str, line: &str) -> Result<&'a str> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Format(format!("manifest line '{line}' lacks {key}")))
}

fn num<T: std::str::FromStr>(tokens: &[&str], key: &str, line: &str) -> Result<T> {
    field(tokens, key, line)?
        .parse()
        .map_err(|_| Error::Format(format!("manifest line '{line}' has a malformed {key}")))
}

/// Rebuilds a zero-initialized layer from its manifest line.
fn parse_layer(line: &str) -> Result<Layer> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let layer = match tokens.first().copied() {
        Some("conv2d") => Layer::Conv2d(
            Conv2d::new(
                field(&tokens, "name", line)?,
                num(&tokens, "in", line)?,
                num(&tokens, "out", line)?,
                num(&tokens, "kernel", line)?,
                num(&tokens, "stride", line)?,
                num(&tokens, "padding", line)?,
            )
            .map_err(|e| Error::Format(e.to_string()))?,
        ),
        Some("relu") => Layer::relu(),
        Some("maxpool2d") => Layer::maxpool(num(&tokens, "window", line)?, num(&tokens, "stride", line)?),
        Some("flatten") => Layer::flatten(),
        Some("dense") => Layer::Dense(
            Dense::new(field(&tokens, "name", line)?, num(&tokens, "in", line)?, num(&tokens, "out", line)?)
                .map_err(|e| Error::Format(e.to_string()))?,
        ),
        Some("dropout") => Layer::dropout(num(&tokens, "rate", line)?).map_err(|e| Error::Format(e.to_string()))?,
        Some("softmax_xent") => Layer::SoftmaxXent {
            classes: num(&tokens, "classes", line)?,
        },
        _ => return Err(Error::Format(format!("unknown manifest line '{line}'"))),
    };
    Ok(layer)
}

fn parse_manifest(text: &str) -> Result<Network> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let dims: Vec<usize> = header
        .strip_prefix("input ")
        .map(|s| s.split('x').filter_map(|d| d.parse().ok()).collect())
        .unwrap_or_default();
    let &[c, h, w] = dims.as_slice() else {
        return Err(Error::Format(format!("bad manifest header '{header}'")));
    };
    let layers = lines.map(parse_layer).collect::<Result<Vec<_>>>()?;
    Network::from_layers([c, h, w], layers).map_err(|e| Error::Format(e.to_string()))
}

impl Checkpoint {
    pub fn new(network: &Network, meta: TrainingMeta) -> Self {
        let mut network = network.clone();
        network.clear_caches();
        Self { network, meta }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn fingerprint(&self) -> u64 {
        self.network.fingerprint()
    }

    /// Raw weight payload in bytes.
    pub fn weight_payload_bytes(&self) -> usize {
        self.network.weight_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let mut out = Vec::with_capacity(net.weight_bytes() + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&net.fingerprint().to_le_bytes());
        put_str(&mut out, &net.manifest());
        out.extend_from_slice(&self.meta.epochs.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_str(&mut out, &self.meta.optimizer);
        out.extend_from_slice(&(net.frozen().len() as u32).to_le_bytes());
        for name in net.frozen() {
            put_str(&mut out, name);
        }
        let params = net.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            put_str(&mut out, &name);
            let encoded = t.to_bytes();
            out.extend_from_slice(&(encoded.len() as u64).to_le_bytes());
            out.extend_from_slice(&encoded);
        }
        out
    }

    /// Parses a checkpoint. Magic, version and fingerprint are verified before
    /// any weight is read.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let stored = r.u64("fingerprint")?;
        let mut network = parse_manifest(&r.string("manifest")?)?;
        let computed = network.fingerprint();
        if computed != stored {
            return Err(Error::Format(format!(
                "stored fingerprint {stored:016x} does not match manifest ({computed:016x})"
            )));
        }
        let epochs = r.u32("epochs")?;
        let seed = r.u64("seed")?;
        let optimizer = r.string("optimizer")?;
        let frozen_count = r.u32("frozen count")?;
        let frozen = (0..frozen_count)
            .map(|_| r.string("frozen name"))
            .collect::<Result<BTreeSet<_>>>()?;
        let count = r.u32("tensor count")? as usize;
        let expected = network.params().len();
        if count != expected {
            return Err(Error::Format(format!("{count} tensors stored, manifest needs {expected}")));
        }
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let len = r.u64("tensor length")? as usize;
            let t = Tensor::from_bytes(r.take(len, "tensor payload")?).map_err(|e| Error::Format(e.to_string()))?;
            let slot = network
                .param_mut(&name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor '{name}'")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?}, manifest needs {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        network.set_frozen(frozen).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            network,
            meta: TrainingMeta { epochs, seed, optimizer },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Loads a checkpoint file into a network.
pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    Checkpoint::load(path).map(Checkpoint::into_network)
}

impl Network {
    pub fn save(&self, path: impl AsRef<Path>, meta: TrainingMeta) -> Result<()> {
        Checkpoint::new(self, meta).save(path)
    }

    /// Copies weights and frozen set from `ckpt`, which must share this
    /// network's architecture fingerprint.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let (expected, found) = (self.fingerprint(), ckpt.fingerprint());
        if expected != found {
            return Err(Error::IncompatibleArchitecture { expected, found });
        }
        *self = ckpt.network.clone();
        Ok(())
    }
}
