use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    /// `base * (total - step) / total`, zero once `step == total`.
    Linear { base: f32 },
    /// `base * factor^k` where `k` counts milestones `<= step`.
    Step {
        base: f32,
        milestones: Vec<usize>,
        factor: f32,
    },
}

impl LrSchedule {
    pub fn rate(&self, step: usize, total: usize) -> f32 {
        match self {
            LrSchedule::Linear { base } => {
                if total == 0 || step >= total {
                    0.0
                } else {
                    base * (total - step) as f32 / total as f32
                }
            }
            LrSchedule::Step {
                base,
                milestones,
                factor,
            } => {
                let passed = milestones.iter().filter(|&&m| m <= step).count();
                let mut lr = *base;
                for _ in 0..passed {
                    lr *= factor;
                }
                lr.max(0.0)
            }
        }
    }

    pub fn base(&self) -> f32 {
        match self {
            LrSchedule::Linear { base } | LrSchedule::Step { base, .. } => *base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub schedule: LrSchedule,
    pub momentum: f32,
    pub weight_decay: f32,
}

/// Momentum SGD: `v <- m v + g + wd p`, `p <- p - lr v`. Only parameters
/// present in the gradient set are touched, velocities included.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: BTreeMap<ParamId, Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, step: usize, total: usize) {
        let lr = self.config.schedule.rate(step, total);
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            let v = self.velocity.entry(id).or_insert_with(|| vec![0.0; g.len()]);
            for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = m * *vv + gv + wd * *pv;
                *pv -= lr * *vv;
            }
        }
    }
}
