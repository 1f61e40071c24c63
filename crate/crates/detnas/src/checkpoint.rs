//! Binary supernet checkpoints.
//!
//! Layout, all integers little-endian: `b"DNAS"`, `u32` version (1), `u8`
//! phase tag, `u64` step, `u64` seed, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, one `u32` per dimension
//! and the `f32` data in row-major order.

use std::path::Path;

use detnas_core::supernet::{Phase, SupernetWeights};
use detnas_core::SearchSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"DNAS";
pub const VERSION: u32 = 1;

pub fn encode(weights: &SupernetWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(weights.phase.tag());
    out.extend_from_slice(&weights.step.to_le_bytes());
    out.extend_from_slice(&weights.seed.to_le_bytes());
    let entries = weights.store.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Loaded header fields and raw tensors, before they are matched to a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let tag = r.array::<1>()?[0];
    let phase = Phase::from_tag(tag).ok_or_else(|| format!("unknown phase tag {tag}"))?;
    let step = u64::from_le_bytes(r.array()?);
    let seed = u64::from_le_bytes(r.array()?);
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.array::<1>()?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(r.array()?) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        tensors.push((name, dims, data));
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(Checkpoint {
        phase,
        step,
        seed,
        tensors,
    })
}

/// Rebuilds supernet weights for `space` from a decoded checkpoint. Every
/// tensor of the space must be present with matching dimensions, and no
/// other tensor may appear.
pub fn restore(ckpt: Checkpoint, space: &SearchSpace, classes: usize) -> Result<SupernetWeights, String> {
    let mut weights = SupernetWeights::new(space, classes, ckpt.seed, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| e.to_string())?;
    let expected = weights.store.entries().len();
    if ckpt.tensors.len() != expected {
        return Err(format!(
            "checkpoint holds {} tensors, the configured space needs {expected}",
            ckpt.tensors.len()
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (name, dims, data) in ckpt.tensors {
        if !seen.insert(name.clone()) {
            return Err(format!("tensor {name:?} appears twice"));
        }
        weights.store.assign(&name, &dims, data).map_err(|e| e.to_string())?;
    }
    weights.phase = ckpt.phase;
    weights.step = ckpt.step;
    weights.seed = ckpt.seed;
    Ok(weights)
}

pub fn save(path: &Path, weights: &SupernetWeights) -> CliResult<()> {
    std::fs::write(path, encode(weights)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path, space: &SearchSpace, classes: usize) -> CliResult<SupernetWeights> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let format = |message| CliError::Format {
        path: path.to_path_buf(),
        message,
    };
    restore(decode(&bytes).map_err(format)?, space, classes).map_err(format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights() -> SupernetWeights {
        let mut w = SupernetWeights::new(&SearchSpace::tiny(), 4, 9, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        w.phase = Phase::Pretrained;
        w.step = 123;
        w
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = weights();
        let bytes = encode(&w);
        let back = restore(decode(&bytes).unwrap(), &w.space, 4).unwrap();
        assert!(back == w);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&weights());
        assert_eq!(&bytes[..4], b"DNAS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], Phase::Pretrained.tag());
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 123);
        assert_eq!(u64::from_le_bytes(bytes[17..25].try_into().unwrap()), 9);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&weights());
        assert!(decode(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).unwrap_err().contains("trailing"));
        let mut tag = bytes;
        tag[8] = 9;
        assert!(decode(&tag).unwrap_err().contains("phase tag"));
    }

    #[test]
    fn wrong_space_is_rejected() {
        let bytes = encode(&weights());
        assert!(restore(decode(&bytes).unwrap(), &SearchSpace::small(), 4).is_err());
        assert!(restore(decode(&bytes).unwrap(), &SearchSpace::tiny(), 5).is_err());
    }
}
