//! Synthetic stand-ins for the pretrain (classification) and finetune
//! (localization) tasks, with their losses and metrics.

mod data;
mod metric;

pub use data::{
    generate_classification_data, generate_localization_data, ClassificationConfig, DatasetSplit,
    Labels, LocalizationConfig, SplitRole, TaskData,
};
pub use metric::{
    best_centered_prior, iou_cxcywh, iou_xywh, task_loss, task_metric, BoxPrior, Predictor,
};

/// What a task asks of the network head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// `classes`-way classification, scored by top-1 accuracy.
    Classification { classes: usize },
    /// Single-box regression of `(cx, cy, w, h)` in `[0, 1]`, scored by mean IoU.
    Localization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub resolution: usize,
}

impl TaskSpec {
    pub fn classification(classes: usize, resolution: usize) -> Self {
        Self {
            kind: TaskKind::Classification { classes },
            resolution,
        }
    }

    pub fn localization(resolution: usize) -> Self {
        Self {
            kind: TaskKind::Localization,
            resolution,
        }
    }

    /// Width of the head output.
    pub fn outputs(&self) -> usize {
        match self.kind {
            TaskKind::Classification { classes } => classes,
            TaskKind::Localization => 4,
        }
    }

    pub fn loss_name(&self) -> &'static str {
        match self.kind {
            TaskKind::Classification { .. } => "softmax_cross_entropy",
            TaskKind::Localization => "smooth_l1",
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            TaskKind::Classification { .. } => "top1_accuracy",
            TaskKind::Localization => "mean_iou",
        }
    }
}
