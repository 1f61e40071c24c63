use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
    /// Buffers (running statistics) are stored and checkpointed but never
    /// receive gradients.
    pub trainable: bool,
}

/// Flat, named tensor storage. Ids are stable for the lifetime of the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, dims: Vec<usize>, data: Vec<f32>, trainable: bool) -> ParamId {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.entries.push(ParamEntry {
            name,
            dims,
            data,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.entries[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.entries[id.0].data
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Overwrites the data of the tensor called `name`; dims must match.
    pub fn assign(&mut self, name: &str, dims: &[usize], data: Vec<f32>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::InvalidConfiguration(alloc::format!("unknown tensor {name:?}")))?;
        let entry = &mut self.entries[id.0];
        if entry.dims != dims || entry.data.len() != data.len() {
            return Err(Error::Shape {
                op: "assign",
                left: alloc::format!("{name} {:?}", entry.dims),
                right: alloc::format!("{dims:?}"),
            });
        }
        entry.data = data;
        Ok(())
    }

    /// FNV-1a over the raw bits of one tensor.
    pub fn checksum(&self, id: ParamId) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.entries[id.0].data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Sparse gradient accumulator keyed by parameter id.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Vec<f32>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[f32]) {
        let slot = self.grads.entry(id).or_insert_with(|| vec![0.0; grad.len()]);
        for (a, &g) in slot.iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f32])> {
        self.grads.iter().map(|(&id, g)| (id, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
