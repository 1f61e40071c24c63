//! Search space definition: the choice blocks, stage layout, architecture
//! encoding and the multiply-accumulate cost model behind the FLOPs budget.

mod arch;
mod flops;

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;

use crate::error::{Error, Result};

pub use arch::{random_architecture, Architecture};
pub use flops::{
    architecture_flops, architecture_flops_at, block_flops, conv_macs, flops_extremes, stem_flops,
    HeadSpec,
};

/// Number of candidate operations per searchable block.
pub const NUM_CHOICES: usize = 4;

/// Stride of the stem convolution.
pub const STEM_STRIDE: usize = 2;

/// One of the four ShuffleNetv2-derived block variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ChoiceKind {
    Shuffle3x3 = 0,
    Shuffle5x5 = 1,
    Shuffle7x7 = 2,
    Xception3x3 = 3,
}

impl ChoiceKind {
    pub const ALL: [ChoiceKind; NUM_CHOICES] = [
        ChoiceKind::Shuffle3x3,
        ChoiceKind::Shuffle5x5,
        ChoiceKind::Shuffle7x7,
        ChoiceKind::Xception3x3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Depthwise kernel size used by the block's convolutions.
    pub fn kernel_size(self) -> usize {
        match self {
            ChoiceKind::Shuffle3x3 | ChoiceKind::Xception3x3 => 3,
            ChoiceKind::Shuffle5x5 => 5,
            ChoiceKind::Shuffle7x7 => 7,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ChoiceKind::Shuffle3x3 => "3x3",
            ChoiceKind::Shuffle5x5 => "5x5",
            ChoiceKind::Shuffle7x7 => "7x7",
            ChoiceKind::Xception3x3 => "xcep",
        }
    }

    /// Accepts integer tags and the symbolic names (case-insensitive).
    pub fn from_token(token: &str) -> Option<Self> {
        let t = token.trim();
        if let Ok(i) = t.parse::<usize>() {
            return Self::from_index(i);
        }
        let lower = t.to_ascii_lowercase();
        match lower.as_str() {
            "3x3" | "shuffle3x3" => Some(ChoiceKind::Shuffle3x3),
            "5x5" | "shuffle5x5" => Some(ChoiceKind::Shuffle5x5),
            "7x7" | "shuffle7x7" => Some(ChoiceKind::Shuffle7x7),
            "xcep" | "xception" | "xception3x3" => Some(ChoiceKind::Xception3x3),
            _ => None,
        }
    }
}

impl fmt::Display for ChoiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One stage of searchable blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub out_channels: usize,
    pub num_blocks: usize,
    pub first_block_stride: usize,
}

impl StageSpec {
    pub const fn new(out_channels: usize, num_blocks: usize) -> Self {
        Self {
            out_channels,
            num_blocks,
            first_block_stride: 2,
        }
    }
}

/// Static position of a searchable block inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPosition {
    pub index: usize,
    pub stage: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    /// (height, width) used for FLOPs reporting and the constraint.
    pub input_resolution: (usize, usize),
}

impl SearchSpace {
    /// Builds and validates a space.
    pub fn new(
        stem_channels: usize,
        stages: Vec<StageSpec>,
        input_resolution: (usize, usize),
    ) -> Result<Self> {
        let space = Self {
            stem_channels,
            stages,
            input_resolution,
        };
        space.validate()?;
        Ok(space)
    }

    fn from_table(stem: usize, table: &[(usize, usize)]) -> Self {
        Self {
            stem_channels: stem,
            stages: table.iter().map(|&(c, n)| StageSpec::new(c, n)).collect(),
            input_resolution: (224, 224),
        }
    }

    /// 40-block space: stem 48, channels (96, 240, 480, 960), blocks (8, 8, 16, 8).
    pub fn large() -> Self {
        Self::from_table(48, &[(96, 8), (240, 8), (480, 16), (960, 8)])
    }

    /// 20-block space: stem 16, channels (64, 160, 320, 640), blocks (4, 4, 8, 4).
    pub fn small() -> Self {
        Self::from_table(16, &[(64, 4), (160, 4), (320, 8), (640, 4)])
    }

    /// 8-block space sized for single-core desk runs on 32x32 inputs.
    pub fn tiny() -> Self {
        Self { input_resolution: (32, 32), ..Self::from_table(8, &[(16, 2), (32, 4), (64, 2)]) }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "large" => Some(Self::large()),
            "small" => Some(Self::small()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(Error::InvalidConfiguration("stem_channels must be positive".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidConfiguration("at least one stage is required".into()));
        }
        if self.input_resolution.0 == 0 || self.input_resolution.1 == 0 {
            return Err(Error::InvalidConfiguration("input resolution must be positive".into()));
        }
        let mut in_channels = self.stem_channels;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.out_channels == 0 || stage.out_channels % 2 != 0 {
                return Err(Error::InvalidConfiguration(format!(
                    "stage {i}: out_channels {} must be positive and even",
                    stage.out_channels
                )));
            }
            if stage.num_blocks == 0 {
                return Err(Error::InvalidConfiguration(format!(
                    "stage {i}: num_blocks must be positive"
                )));
            }
            match stage.first_block_stride {
                2 => {}
                1 if in_channels == stage.out_channels => {}
                1 => {
                    return Err(Error::InvalidConfiguration(format!(
                        "stage {i}: stride-1 first block cannot change channels {in_channels} -> {}",
                        stage.out_channels
                    )))
                }
                s => {
                    return Err(Error::InvalidConfiguration(format!(
                        "stage {i}: stride {s} not in {{1, 2}}"
                    )))
                }
            }
            in_channels = stage.out_channels;
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.num_blocks).sum()
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.out_channels)
    }

    /// Channel and stride layout of every searchable block, in network order.
    pub fn blocks(&self) -> Vec<BlockPosition> {
        let mut out = Vec::with_capacity(self.total_blocks());
        let mut in_channels = self.stem_channels;
        for (stage_idx, stage) in self.stages.iter().enumerate() {
            for b in 0..stage.num_blocks {
                let stride = if b == 0 { stage.first_block_stride } else { 1 };
                out.push(BlockPosition {
                    index: out.len(),
                    stage: stage_idx,
                    in_channels,
                    out_channels: stage.out_channels,
                    stride,
                });
                in_channels = stage.out_channels;
            }
        }
        out
    }

    /// Stage index of each searchable block.
    pub fn stage_of_block(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.stage).collect()
    }
}

/// Number of distinct architectures, `4^blocks`.
pub fn cardinality(space: &SearchSpace) -> BigUint {
    BigUint::from(NUM_CHOICES as u32).pow(space.total_blocks() as u32)
}

/// Hard FLOPs budget (multiply-accumulates at the space's reporting resolution).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraint {
    pub max_flops: u64,
}

impl Constraint {
    pub const UNBOUNDED: Constraint = Constraint {
        max_flops: u64::MAX,
    };

    pub fn new(max_flops: u64) -> Self {
        Self { max_flops }
    }

    pub fn is_unbounded(&self) -> bool {
        self.max_flops == u64::MAX
    }

    pub fn admits(&self, flops: u64) -> bool {
        flops <= self.max_flops
    }

    pub fn satisfies(&self, arch: &Architecture, space: &SearchSpace) -> Result<bool> {
        Ok(self.admits(architecture_flops(arch, space)?))
    }
}

impl Default for Constraint {
    fn default() -> Self {
        Self::UNBOUNDED
    }
}
