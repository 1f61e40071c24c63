use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::searchspace::{Architecture, SearchSpace, NUM_CHOICES};

/// Per-stage counts of each choice over a set of architectures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternReport {
    /// `counts[stage][choice]`.
    pub counts: Vec<[usize; NUM_CHOICES]>,
    pub architectures: usize,
    /// Number of blocks in each stage.
    pub stage_blocks: Vec<usize>,
}

impl PatternReport {
    pub fn frequency(&self, stage: usize, choice: usize) -> f64 {
        let row = &self.counts[stage];
        let total: usize = row.iter().sum();
        row[choice] as f64 / total as f64
    }
}

pub fn pattern_report(archs: &[Architecture], space: &SearchSpace) -> Result<PatternReport> {
    if archs.is_empty() {
        return Err(Error::Empty("architecture list"));
    }
    let stage_of = space.stage_of_block();
    let mut counts = vec![[0usize; NUM_CHOICES]; space.stages.len()];
    for arch in archs {
        if arch.len() != space.total_blocks() {
            return Err(Error::InvalidArchitecture(format!(
                "architecture with {} blocks in a {}-block space",
                arch.len(),
                space.total_blocks()
            )));
        }
        for (i, c) in arch.choices().iter().enumerate() {
            counts[stage_of[i]][c.index()] += 1;
        }
    }
    Ok(PatternReport {
        counts,
        architectures: archs.len(),
        stage_blocks: space.stages.iter().map(|s| s.num_blocks).collect(),
    })
}
