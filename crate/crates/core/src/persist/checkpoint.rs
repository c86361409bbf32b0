//! Binary weight files: `SYNM` magic, format version, a JSON header that
//! describes every tensor, then the raw little-endian f64 payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::io::write_atomic;
use crate::error::{Error, Result};
use crate::math::Tensor;

pub const MAGIC: &[u8; 4] = b"SYNM";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: Value,
    pub tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: module kind, config echo and named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let bytes = (t.len() * 8) as u64;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    bytes,
                };
                offset += bytes;
                e
            })
            .collect();
        CheckpointHeader {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| Error::json("checkpoint header", e))?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a whole file image; `source` only labels errors.
    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic(source.to_path_buf()));
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::Truncated(format!("{}: {} byte preamble", source.display(), bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = PREAMBLE
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{}: header of {header_len} bytes does not fit", source.display())))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
            .map_err(|e| Error::Checkpoint(format!("{}: header: {e}", source.display())))?;
        let payload = &bytes[payload_start..];
        let mut expected_offset = 0u64;
        for e in &header.tensors {
            let count: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.bytes != (count * 8) as u64 {
                return Err(Error::Checkpoint(format!("{}: tensor {} has inconsistent extent", source.display(), e.name)));
            }
            expected_offset += e.bytes;
        }
        let needed = expected_offset as usize;
        if payload.len() < needed {
            return Err(Error::Truncated(format!(
                "{}: payload has {} of {needed} bytes",
                source.display(),
                payload.len()
            )));
        }
        if payload.len() > needed {
            return Err(Error::Checkpoint(format!("{}: {} trailing bytes", source.display(), payload.len() - needed)));
        }
        let tensors = header
            .tensors
            .iter()
            .map(|e| {
                let span = &payload[e.offset as usize..(e.offset + e.bytes) as usize];
                let data = span.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Ok((e.name.clone(), Tensor::new(e.shape.clone(), data)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: header.kind,
            config: header.config,
            tensors,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
