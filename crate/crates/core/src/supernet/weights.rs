use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, ParamId, ParamStore};
use crate::searchspace::{BlockPosition, ChoiceKind, SearchSpace, NUM_CHOICES, STEM_STRIDE};

/// Training state recorded with the weights. Finetuning requires
/// `Pretrained`, searching requires `Finetuned`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initialized,
    Pretrained,
    Finetuned,
}

impl Phase {
    pub fn tag(self) -> u8 {
        match self {
            Phase::Initialized => 0,
            Phase::Pretrained => 1,
            Phase::Finetuned => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Phase::Initialized),
            1 => Some(Phase::Pretrained),
            2 => Some(Phase::Finetuned),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Initialized => "initialized",
            Phase::Pretrained => "pretrained",
            Phase::Finetuned => "finetuned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classification,
    Localization,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Classification => "cls",
            HeadKind::Localization => "loc",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cls" | "classification" => Ok(HeadKind::Classification),
            "loc" | "localization" => Ok(HeadKind::Localization),
            other => Err(Error::UnknownHead(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvUnit {
    pub weight: ParamId,
    pub spec: ConvSpec,
}

/// Batch norm: learnable scale/shift plus the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormUnit {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv(ConvUnit),
    Norm(NormUnit),
    Relu,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Branch {
    pub layers: Vec<Layer>,
}

impl Branch {
    pub fn norms(&self) -> impl Iterator<Item = &NormUnit> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvUnit> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }
}

/// Parameters of one choice at one block position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceBundle {
    pub choice: ChoiceKind,
    pub position: BlockPosition,
    /// Present only for stride-2 blocks; stride-1 blocks pass half the
    /// channels through untouched.
    pub left: Option<Branch>,
    pub right: Branch,
}

impl ChoiceBundle {
    pub fn branches(&self) -> impl Iterator<Item = &Branch> {
        self.left.iter().chain(core::iter::once(&self.right))
    }

    /// Every tensor owned by this bundle, buffers included.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for branch in self.branches() {
            for layer in &branch.layers {
                match layer {
                    Layer::Conv(c) => ids.push(c.weight),
                    Layer::Norm(n) => {
                        ids.extend([n.scale, n.shift, n.running_mean, n.running_var]);
                    }
                    Layer::Relu => {}
                }
            }
        }
        ids
    }
}

/// Global-average-pool followed by a fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

/// Shared parameter store of the whole supernet.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetWeights {
    pub space: SearchSpace,
    pub store: ParamStore,
    pub stem: Branch,
    /// `blocks[i][c]` is the bundle of choice `c` at block `i`.
    pub blocks: Vec<[ChoiceBundle; NUM_CHOICES]>,
    pub cls_head: FcHead,
    pub loc_head: FcHead,
    pub phase: Phase,
    /// Training iterations applied so far, over all phases.
    pub step: u64,
    pub seed: u64,
}

struct Builder<'r, R: Rng + ?Sized> {
    store: ParamStore,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn he_normal(&mut self, len: usize, fan_in: usize) -> Vec<f32> {
        let std = num_traits::Float::sqrt(2.0 / fan_in as f32);
        let normal = Normal::new(0.0f32, std).expect("positive std");
        (0..len).map(|_| normal.sample(&mut *self.rng)).collect()
    }

    fn conv(&mut self, prefix: &str, spec: ConvSpec) -> Layer {
        let k = spec.kernel;
        let dims = vec![spec.out_channels, spec.in_channels / spec.groups, k, k];
        let data = self.he_normal(spec.weight_len(), spec.fan_in());
        let weight = self.store.push(format!("{prefix}.weight"), dims, data, true);
        Layer::Conv(ConvUnit { weight, spec })
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> Layer {
        let dims = vec![channels];
        Layer::Norm(NormUnit {
            scale: self.store.push(format!("{prefix}.scale"), dims.clone(), vec![1.0; channels], true),
            shift: self.store.push(format!("{prefix}.shift"), dims.clone(), vec![0.0; channels], true),
            running_mean: self
                .store
                .push(format!("{prefix}.running_mean"), dims.clone(), vec![0.0; channels], false),
            running_var: self
                .store
                .push(format!("{prefix}.running_var"), dims, vec![1.0; channels], false),
            channels,
        })
    }

    /// Builds a branch from a compact recipe; layer names are indexed by
    /// position in the branch.
    fn branch(&mut self, prefix: &str, recipe: &[Recipe]) -> Branch {
        let mut layers = Vec::with_capacity(recipe.len());
        for (i, r) in recipe.iter().enumerate() {
            let name = format!("{prefix}.{i}");
            layers.push(match *r {
                Recipe::Conv(spec) => self.conv(&name, spec),
                Recipe::Norm(c) => self.norm(&name, c),
                Recipe::Relu => Layer::Relu,
            });
        }
        Branch { layers }
    }

    fn head(&mut self, name: &str, inputs: usize, outputs: usize) -> FcHead {
        let data = self.he_normal(inputs * outputs, inputs);
        let weight = self.store.push(format!("head.{name}.weight"), vec![outputs, inputs], data, true);
        let bias = self.store.push(format!("head.{name}.bias"), vec![outputs], vec![0.0; outputs], true);
        FcHead {
            weight,
            bias,
            inputs,
            outputs,
        }
    }
}


#[derive(Clone, Copy)]
enum Recipe {
    Conv(ConvSpec),
    Norm(usize),
    Relu,
}

/// `dw k x k -> BN -> 1x1 -> BN -> ReLU`
fn separable(recipe: &mut Vec<Recipe>, cin: usize, cout: usize, k: usize, stride: usize) {
    recipe.extend([
        Recipe::Conv(ConvSpec::depthwise(cin, k, stride)),
        Recipe::Norm(cin),
        Recipe::Conv(ConvSpec::pointwise(cin, cout)),
        Recipe::Norm(cout),
        Recipe::Relu,
    ]);
}

fn block_recipes(choice: ChoiceKind, pos: &BlockPosition) -> (Option<Vec<Recipe>>, Vec<Recipe>) {
    let k = choice.kernel_size();
    let s = pos.stride;
    let half = pos.out_channels / 2;
    // a stride-1 block only sees the right half of its input
    let cin = if s == 1 { half } else { pos.in_channels };
    let left = (s == 2).then(|| {
        let mut r = Vec::new();
        separable(&mut r, pos.in_channels, half, k, 2);
        r
    });
    let mut right = Vec::new();
    match choice {
        ChoiceKind::Xception3x3 => {
            separable(&mut right, cin, half, 3, s);
            separable(&mut right, half, half, 3, 1);
            separable(&mut right, half, half, 3, 1);
        }
        _ => {
            right.extend([
                Recipe::Conv(ConvSpec::pointwise(cin, half)),
                Recipe::Norm(half),
                Recipe::Relu,
            ]);
            separable(&mut right, half, half, k, s);
        }
    }
    (left, right)
}

impl SupernetWeights {
    /// Fresh supernet: convolution and FC weights from `N(0, 2 / fan_in)`,
    /// BN scale 1 and shift 0, running statistics `(0, 1)`.
    pub fn new<R: Rng + ?Sized>(space: &SearchSpace, classes: usize, seed: u64, rng: &mut R) -> Result<Self> {
        space.validate()?;
        if classes < 2 {
            return Err(Error::InvalidConfiguration(format!("need at least 2 classes, got {classes}")));
        }
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let stem = b.branch(
            "stem",
            &[
                Recipe::Conv(ConvSpec::dense(3, space.stem_channels, 3, STEM_STRIDE)),
                Recipe::Norm(space.stem_channels),
                Recipe::Relu,
            ],
        );
        let mut blocks = Vec::with_capacity(space.total_blocks());
        for pos in space.blocks() {
            let bundles = ChoiceKind::ALL.map(|choice| {
                let prefix = format!("block{}.choice{}", pos.index, choice.index());
                let (left, right) = block_recipes(choice, &pos);
                ChoiceBundle {
                    choice,
                    position: pos,
                    left: left.map(|r| b.branch(&format!("{prefix}.left"), &r)),
                    right: b.branch(&format!("{prefix}.right"), &right),
                }
            });
            blocks.push(bundles);
        }
        let c = space.final_channels();
        let cls_head = b.head("cls", c, classes);
        let loc_head = b.head("loc", c, 4);
        Ok(Self {
            space: space.clone(),
            store: b.store,
            stem,
            blocks,
            cls_head,
            loc_head,
            phase: Phase::Initialized,
            step: 0,
            seed,
        })
    }

    pub fn classes(&self) -> usize {
        self.cls_head.outputs
    }

    pub fn bundle(&self, block: usize, choice: ChoiceKind) -> &ChoiceBundle {
        &self.blocks[block][choice.index()]
    }

    pub fn head(&self, kind: HeadKind) -> &FcHead {
        match kind {
            HeadKind::Classification => &self.cls_head,
            HeadKind::Localization => &self.loc_head,
        }
    }

    pub fn head_param_ids(&self, kind: HeadKind) -> [ParamId; 2] {
        let h = self.head(kind);
        [h.weight, h.bias]
    }

    pub fn stem_param_ids(&self) -> Vec<ParamId> {
        let bundle_like = ChoiceBundle {
            choice: ChoiceKind::Shuffle3x3,
            position: BlockPosition {
                index: 0,
                stage: 0,
                in_channels: 3,
                out_channels: self.space.stem_channels,
                stride: STEM_STRIDE,
            },
            left: None,
            right: self.stem.clone(),
        };
        bundle_like.param_ids()
    }

    /// Checksum of every tensor in a bundle.
    pub fn bundle_checksum(&self, block: usize, choice: ChoiceKind) -> u64 {
        self.bundle(block, choice)
            .param_ids()
            .into_iter()
            .fold(0u64, |acc, id| acc.rotate_left(7) ^ self.store.checksum(id))
    }

    pub fn require_phase(&self, expected: Phase) -> Result<()> {
        if self.phase != expected {
            return Err(Error::PhaseOrder {
                expected: expected.name(),
                found: self.phase.name(),
            });
        }
        Ok(())
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.store.entries().iter().map(|e| e.name.clone()).collect()
    }
}
