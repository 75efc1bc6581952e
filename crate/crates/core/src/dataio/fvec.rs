//! FVEC: little-endian labelled feature records.
//!
//! ```text
//! magic   [u8; 4]  "FVEC"
//! version u32      1
//! dim     u32
//! count   u64
//! count × { label u32, features dim × f32 }
//! ```

use std::fs;
use std::path::Path;

use super::LabeledFeature;
use crate::error::{Error, FvecError, Result};

pub const FVEC_MAGIC: [u8; 4] = *b"FVEC";
pub const FVEC_VERSION: u32 = 1;
pub const FVEC_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FvecData {
    pub dim: usize,
    pub samples: Vec<LabeledFeature>,
}

impl FvecData {
    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.samples.iter().map(|s| s.label)
    }
}

fn record_len(dim: usize) -> u64 {
    4 + 4 * dim as u64
}

pub fn encode_fvec(dim: usize, samples: &[LabeledFeature]) -> Result<Vec<u8>> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(FvecError::ZeroDim.into());
    }
    let mut out = Vec::with_capacity(FVEC_HEADER_LEN + samples.len() * record_len(dim) as usize);
    out.extend_from_slice(&FVEC_MAGIC);
    out.extend_from_slice(&FVEC_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.features.len() != dim {
            return Err(FvecError::DimMismatch {
                header: dim,
                sample: s.features.len(),
            }
            .into());
        }
        if s.label >= 1 << 31 {
            return Err(FvecError::LabelRange(s.label).into());
        }
        out.extend_from_slice(&s.label.to_le_bytes());
        for &v in &s.features {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

pub fn decode_fvec(bytes: &[u8]) -> Result<FvecData> {
    let found = bytes.len() as u64;
    if bytes.len() >= 4 && bytes[..4] != FVEC_MAGIC {
        return Err(FvecError::BadMagic {
            found: bytes[..4].try_into().expect("4 bytes"),
        }
        .into());
    }
    if bytes.len() < FVEC_HEADER_LEN {
        return Err(FvecError::Truncated {
            expected: FVEC_HEADER_LEN as u64,
            found,
        }
        .into());
    }
    let version = u32_at(bytes, 4);
    if version != FVEC_VERSION {
        return Err(FvecError::VersionMismatch { found: version }.into());
    }
    let dim = u32_at(bytes, 8) as usize;
    if dim == 0 {
        return Err(FvecError::ZeroDim.into());
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = count
        .checked_mul(record_len(dim))
        .and_then(|n| n.checked_add(FVEC_HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    if found < expected {
        return Err(FvecError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(FvecError::TrailingBytes { expected, found }.into());
    }
    let mut samples = Vec::with_capacity(count as usize);
    let rec = record_len(dim) as usize;
    for chunk in bytes[FVEC_HEADER_LEN..].chunks_exact(rec) {
        let label = u32_at(chunk, 0);
        if label >= 1 << 31 {
            return Err(FvecError::LabelRange(label).into());
        }
        let features = chunk[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        samples.push(LabeledFeature { label, features });
    }
    Ok(FvecData { dim, samples })
}

pub fn write_fvec(path: impl AsRef<Path>, dim: usize, samples: &[LabeledFeature]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fvec(dim, samples)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_fvec(path: impl AsRef<Path>) -> Result<FvecData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_fvec(&bytes)
}

/// Reads a file and requires its dimension to be `expected_dim`.
pub fn read_fvec_with_dim(path: impl AsRef<Path>, expected_dim: usize) -> Result<FvecData> {
    let data = read_fvec(path)?;
    if data.dim != expected_dim {
        return Err(FvecError::DimMismatch {
            header: data.dim,
            sample: expected_dim,
        }
        .into());
    }
    Ok(data)
}
