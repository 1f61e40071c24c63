//! The weight-sharing supernet.
//!
//! Every searchable block owns four disjoint parameter bundles, one per
//! choice. A path ([`PathNet`]) borrows the bundles its architecture selects
//! and keeps private copies of their batch-norm running statistics, so
//! evaluating one path never disturbs another.

mod path;
mod train;
mod weights;

pub use path::{evaluate_path, BnMode, PathNet, PathTrace};
pub use train::{
    finetune_milestones, train_step, train_supernet, IterationRecord, PathSampler, PhaseSchedule, TrainPhase,
    TrainReport, TrainingSchedule,
};
pub use weights::{
    Branch, ChoiceBundle, ConvUnit, FcHead, HeadKind, Layer, NormUnit, Phase, SupernetWeights,
};
