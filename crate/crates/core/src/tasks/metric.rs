use alloc::vec::Vec;

use super::data::{DatasetSplit, Labels};
use super::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::nn::{smooth_l1, softmax_cross_entropy, Shape, Tensor};

/// Anything that maps a batch of images to head outputs in evaluation mode.
pub trait Predictor {
    fn predict(&mut self, images: &Tensor) -> Result<Tensor>;
}

/// Loss and gradient of `head_output` (logits, or sigmoid-bounded boxes)
/// against `labels`.
pub fn task_loss(head_output: &Tensor, labels: &Labels, spec: &TaskSpec) -> Result<(f32, Tensor)> {
    match (spec.kind, labels) {
        (TaskKind::Classification { .. }, Labels::Classes(classes)) => {
            softmax_cross_entropy(head_output, classes)
        }
        (TaskKind::Localization, Labels::Boxes(boxes)) => {
            let target = Tensor::from_vec(
                Shape::matrix(boxes.len(), 4),
                boxes.iter().flat_map(|b| b.iter().copied()).collect(),
            )?;
            smooth_l1(head_output, &target)
        }
        _ => Err(Error::InvalidConfiguration("labels do not match task kind".into())),
    }
}

/// IoU of two boxes given as top-left corner plus size, `(x, y, w, h)`.
pub fn iou_xywh(a: [f32; 4], b: [f32; 4]) -> f32 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = ix.max(0.0) * iy.max(0.0);
    let union = a[2].max(0.0) * a[3].max(0.0) + b[2].max(0.0) * b[3].max(0.0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of two boxes given as centre plus size, `(cx, cy, w, h)`.
pub fn iou_cxcywh(a: [f32; 4], b: [f32; 4]) -> f32 {
    let corner = |v: [f32; 4]| [v[0] - v[2] / 2.0, v[1] - v[3] / 2.0, v[2], v[3]];
    iou_xywh(corner(a), corner(b))
}

/// Top-1 accuracy or mean IoU of `predictor` over `split`, batch by batch.
pub fn task_metric<P: Predictor + ?Sized>(
    predictor: &mut P,
    split: &DatasetSplit,
    spec: &TaskSpec,
    batch_size: usize,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut total = 0.0f64;
    for (images, labels) in split.batches(batch_size) {
        let out = predictor.predict(&images)?;
        let width = spec.outputs();
        if out.shape() != Shape::matrix(labels.len(), width) {
            return Err(Error::Shape {
                op: "task_metric",
                left: alloc::format!("{}", out.shape()),
                right: alloc::format!("{}", Shape::matrix(labels.len(), width)),
            });
        }
        match (spec.kind, &labels) {
            (TaskKind::Classification { .. }, Labels::Classes(classes)) => {
                for (n, &label) in classes.iter().enumerate() {
                    let row = out.sample(n);
                    // first maximum wins
                    let mut best = 0;
                    for j in 1..row.len() {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    if best == label {
                        total += 1.0;
                    }
                }
            }
            (TaskKind::Localization, Labels::Boxes(boxes)) => {
                for (n, b) in boxes.iter().enumerate() {
                    let row = out.sample(n);
                    total += iou_cxcywh([row[0], row[1], row[2], row[3]], *b) as f64;
                }
            }
            _ => return Err(Error::InvalidConfiguration("labels do not match task kind".into())),
        }
    }
    Ok(total / split.len() as f64)
}

/// Best fixed box centred in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPrior {
    pub w: f32,
    pub h: f32,
    pub mean_iou: f64,
}

/// Exhaustive search over centred boxes with sides on a `steps`-point grid
/// in `(0, 1]`, maximizing mean IoU on `split`.
pub fn best_centered_prior(split: &DatasetSplit, steps: usize) -> Result<BoxPrior> {
    let Labels::Boxes(boxes) = &split.labels else {
        return Err(Error::InvalidConfiguration("centred prior needs box labels".into()));
    };
    if boxes.is_empty() {
        return Err(Error::Empty("box split"));
    }
    let grid: Vec<f32> = (1..=steps).map(|i| i as f32 / steps as f32).collect();
    let mut best = BoxPrior {
        w: 0.0,
        h: 0.0,
        mean_iou: -1.0,
    };
    for &w in &grid {
        for &h in &grid {
            let prior = [0.5, 0.5, w, h];
            let iou: f64 = boxes.iter().map(|b| iou_cxcywh(prior, *b) as f64).sum::<f64>()
                / boxes.len() as f64;
            if iou > best.mean_iou {
                best = BoxPrior { w, h, mean_iou: iou };
            }
        }
    }
    Ok(best)
}
