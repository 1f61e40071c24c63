use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::path::{BnMode, PathNet};
use super::weights::{HeadKind, NormUnit, Phase, SupernetWeights};
use crate::error::{Error, Result};
use crate::nn::{LrSchedule, Sgd, SgdConfig, Tensor};
use crate::searchspace::{random_architecture, Architecture};
use crate::tasks::{task_loss, DatasetSplit, Labels, TaskKind, TaskSpec};

/// Iterations, batch size and optimizer of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl PhaseSchedule {
    /// Linear decay to zero, momentum 0.9, weight decay 4e-5.
    pub fn pretrain(iterations: usize, batch_size: usize, learning_rate: f32) -> Self {
        Self {
            iterations,
            batch_size,
            sgd: SgdConfig {
                schedule: LrSchedule::Linear { base: learning_rate },
                momentum: 0.9,
                weight_decay: 4e-5,
            },
        }
    }

    /// Step decay by 10x at 2/3 and 8/9 of the run, momentum 0.9, weight
    /// decay 1e-4.
    pub fn finetune(iterations: usize, batch_size: usize, learning_rate: f32) -> Self {
        Self {
            iterations,
            batch_size,
            sgd: SgdConfig {
                schedule: LrSchedule::Step {
                    base: learning_rate,
                    milestones: finetune_milestones(iterations),
                    factor: 0.1,
                },
                momentum: 0.9,
                weight_decay: 1e-4,
            },
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfiguration(format!("{name}.iterations must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfiguration(format!("{name}.batch_size must be positive")));
        }
        if self.sgd.schedule.base() < 0.0 {
            return Err(Error::InvalidConfiguration(format!("{name}.learning_rate must be non-negative")));
        }
        Ok(())
    }
}

pub fn finetune_milestones(iterations: usize) -> Vec<usize> {
    vec![iterations * 2 / 3, iterations * 8 / 9]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub pretrain: PhaseSchedule,
    pub finetune: PhaseSchedule,
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        if !matches!(self.pretrain.sgd.schedule, LrSchedule::Linear { .. }) {
            return Err(Error::InvalidConfiguration("pretraining uses linear decay".into()));
        }
        if !matches!(self.finetune.sgd.schedule, LrSchedule::Step { .. }) {
            return Err(Error::InvalidConfiguration("finetuning uses step decay".into()));
        }
        Ok(())
    }
}

impl Default for TrainingSchedule {
    /// Desk-scale defaults: 4000 pretraining and 2000 finetuning iterations
    /// at batch 64.
    fn default() -> Self {
        Self {
            pretrain: PhaseSchedule::pretrain(4000, 64, 0.1),
            finetune: PhaseSchedule::finetune(2000, 64, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Pretrain,
    /// `from_scratch` accepts randomly initialized weights instead of a
    /// pretrained supernet.
    Finetune { from_scratch: bool },
}

/// Which path each iteration trains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSampler {
    /// A fresh uniform-random path per iteration.
    Uniform,
    /// Always the same path: stand-alone training of one architecture.
    Fixed(Architecture),
}

impl PathSampler {
    fn sample<R: Rng + ?Sized>(&self, weights: &SupernetWeights, rng: &mut R) -> Architecture {
        match self {
            PathSampler::Uniform => random_architecture(&weights.space, rng),
            PathSampler::Fixed(a) => a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub architecture: Architecture,
    pub loss: f32,
    pub learning_rate: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub losses: Vec<f32>,
}

impl TrainReport {
    /// Mean loss over the last `fraction` of iterations.
    pub fn tail_loss(&self, fraction: f64) -> f32 {
        let n = self.losses.len();
        if n == 0 {
            return f32::NAN;
        }
        let k = (num_traits::Float::ceil(n as f64 * fraction) as usize).clamp(1, n);
        self.losses[n - k..].iter().sum::<f32>() / k as f32
    }
}

fn path_norms(weights: &SupernetWeights, arch: &Architecture) -> Vec<NormUnit> {
    let mut units: Vec<NormUnit> = weights.stem.norms().copied().collect();
    for (i, c) in arch.choices().iter().enumerate() {
        for branch in weights.blocks[i][c.index()].branches() {
            units.extend(branch.norms().copied());
        }
    }
    units
}

/// One forward/backward/SGD step on a single path. Only the path's bundles,
/// the stem and the attached head change.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    weights: &mut SupernetWeights,
    sgd: &mut Sgd,
    arch: &Architecture,
    head: HeadKind,
    task: &TaskSpec,
    images: &Tensor,
    labels: &Labels,
    step: usize,
    total: usize,
) -> Result<f32> {
    let (loss, grads, stats) = {
        let mut net = PathNet::new(weights, arch, head)?;
        let (out, trace) = net.forward(images, BnMode::Train)?;
        let trace = trace.expect("train mode keeps a trace");
        let (loss, dout) = task_loss(&out, labels, task)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        let grads = net.backward(&trace, &dout)?;
        (loss, grads, net.into_bn_stats())
    };
    sgd.step(&mut weights.store, &grads, step, total);
    for unit in path_norms(weights, arch) {
        if let Some(s) = stats.get(&unit.running_mean) {
            weights.store.get_mut(unit.running_mean).copy_from_slice(&s.mean);
            weights.store.get_mut(unit.running_var).copy_from_slice(&s.var);
        }
    }
    Ok(loss)
}

/// Path-wise supernet training for one phase.
///
/// Pretraining needs freshly initialized weights and a classification task;
/// finetuning needs pretrained weights (or `from_scratch`) and a
/// localization task. Each iteration samples a path, draws the next
/// minibatch of a per-epoch shuffle, and applies one SGD step.
#[allow(clippy::too_many_arguments)]
pub fn train_supernet<R: Rng + ?Sized>(
    weights: &mut SupernetWeights,
    schedule: &PhaseSchedule,
    phase: TrainPhase,
    task: &TaskSpec,
    data: &DatasetSplit,
    sampler: &PathSampler,
    rng: &mut R,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<TrainReport> {
    let (head, name) = match phase {
        TrainPhase::Pretrain => (HeadKind::Classification, "pretrain"),
        TrainPhase::Finetune { .. } => (HeadKind::Localization, "finetune"),
    };
    schedule.validate(name)?;
    match phase {
        TrainPhase::Pretrain => weights.require_phase(Phase::Initialized)?,
        TrainPhase::Finetune { from_scratch: false } => weights.require_phase(Phase::Pretrained)?,
        TrainPhase::Finetune { from_scratch: true } => weights.require_phase(Phase::Initialized)?,
    }
    match (head, task.kind) {
        (HeadKind::Classification, TaskKind::Classification { classes }) if classes == weights.classes() => {}
        (HeadKind::Localization, TaskKind::Localization) => {}
        _ => {
            return Err(Error::InvalidConfiguration(format!(
                "{name} cannot train on task {:?}",
                task.kind
            )))
        }
    }
    if let PathSampler::Fixed(a) = sampler {
        a.check_space(&weights.space)?;
    }
    if data.is_empty() {
        return Err(Error::Empty("training split"));
    }

    let mut sgd = Sgd::new(schedule.sgd.clone());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport {
        losses: Vec::with_capacity(schedule.iterations),
    };
    for it in 0..schedule.iterations {
        let arch = sampler.sample(weights, rng);
        let mut batch = Vec::with_capacity(schedule.batch_size);
        while batch.len() < schedule.batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (images, labels) = data.batch(&batch);
        let lr = schedule.sgd.schedule.rate(it, schedule.iterations);
        let loss = train_step(weights, &mut sgd, &arch, head, task, &images, &labels, it, schedule.iterations)
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at {name} iteration {it} on path {arch}"))
                }
                other => other,
            })?;
        report.losses.push(loss);
        observer(&IterationRecord {
            iteration: it,
            architecture: arch,
            loss,
            learning_rate: lr,
        });
    }
    weights.phase = match phase {
        TrainPhase::Pretrain => Phase::Pretrained,
        TrainPhase::Finetune { .. } => Phase::Finetuned,
    };
    weights.step += schedule.iterations as u64;
    Ok(report)
}
