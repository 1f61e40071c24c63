use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::weights::{Branch, ChoiceBundle, HeadKind, Layer, SupernetWeights};
use crate::error::{Error, Result};
use crate::nn::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, channel_concat,
    channel_concat_backward, channel_shuffle, channel_shuffle_backward, channel_split, conv2d,
    conv2d_backward, fully_connected, fully_connected_backward, global_avg_pool,
    global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward, BnCache, BnStats,
    ChannelStats, Gradients, ParamId, Shape, Tensor, BN_EPSILON, BN_MOMENTUM,
};
use crate::searchspace::Architecture;
use crate::tasks::{task_metric, DatasetSplit, Predictor, TaskKind, TaskSpec};

/// How batch norm treats the activations it sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and move the running averages.
    Train,
    /// Normalize with the running statistics.
    Eval,
    /// Normalize with batch statistics and accumulate them for
    /// [`PathNet::recompute_bn_statistics`].
    Calibrate,
}

enum LayerTrace {
    Conv(Tensor),
    Norm(BnCache<f32>),
    Relu(Tensor),
}

struct BlockTrace {
    left: Option<Vec<LayerTrace>>,
    right: Vec<LayerTrace>,
    left_channels: usize,
}

/// Saved activations of one training-mode forward pass.
pub struct PathTrace {
    stem: Vec<LayerTrace>,
    blocks: Vec<BlockTrace>,
    features: Shape,
    pooled: Tensor,
    output: Tensor,
}

/// One architecture instantiated over the shared weights. Parameters are
/// borrowed; batch-norm running statistics are private to the instance.
pub struct PathNet<'w> {
    weights: &'w SupernetWeights,
    arch: Architecture,
    head: HeadKind,
    stats: BTreeMap<ParamId, BnStats>,
    calibration: BTreeMap<ParamId, ChannelStats>,
}

impl<'w> PathNet<'w> {
    pub fn new(weights: &'w SupernetWeights, arch: &Architecture, head: HeadKind) -> Result<Self> {
        arch.check_space(&weights.space)?;
        let mut net = Self {
            weights,
            arch: arch.clone(),
            head,
            stats: BTreeMap::new(),
            calibration: BTreeMap::new(),
        };
        let mut branches: Vec<&Branch> = alloc::vec![&weights.stem];
        for i in 0..arch.len() {
            branches.extend(net.bundle(i).branches());
        }
        for branch in branches {
            for n in branch.norms() {
                net.stats.insert(
                    n.running_mean,
                    BnStats {
                        mean: weights.store.get(n.running_mean).to_vec(),
                        var: weights.store.get(n.running_var).to_vec(),
                    },
                );
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn weights(&self) -> &'w SupernetWeights {
        self.weights
    }

    /// The shared bundle used at block `index`.
    pub fn bundle(&self, index: usize) -> &'w ChoiceBundle {
        let choice = self.arch.choices()[index];
        &self.weights.blocks[index][choice.index()]
    }

    /// Private running statistics, keyed by the id of the stored running mean.
    pub fn bn_stats(&self) -> &BTreeMap<ParamId, BnStats> {
        &self.stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut BTreeMap<ParamId, BnStats> {
        &mut self.stats
    }

    pub fn into_bn_stats(self) -> BTreeMap<ParamId, BnStats> {
        self.stats
    }

    fn run_branch(
        &mut self,
        branch: &Branch,
        mut x: Tensor,
        mode: BnMode,
        mut trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Tensor> {
        let store = &self.weights.store;
        for layer in &branch.layers {
            x = match *layer {
                Layer::Conv(c) => {
                    let y = conv2d(&x, store.get(c.weight), &c.spec)?;
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(LayerTrace::Conv(x));
                    }
                    y
                }
                Layer::Norm(n) => {
                    let (scale, shift) = (store.get(n.scale), store.get(n.shift));
                    match mode {
                        BnMode::Eval => {
                            let stats = &self.stats[&n.running_mean];
                            batch_norm_eval(&x, scale, shift, stats, BN_EPSILON)?
                        }
                        BnMode::Train | BnMode::Calibrate => {
                            let (y, cache, batch) = batch_norm_train(&x, scale, shift, BN_EPSILON)?;
                            if mode == BnMode::Train {
                                if let Some(s) = self.stats.get_mut(&n.running_mean) {
                                    s.update_ema(&batch, BN_MOMENTUM);
                                }
                            } else {
                                self.calibration
                                    .entry(n.running_mean)
                                    .and_modify(|acc| acc.merge(&batch))
                                    .or_insert(batch);
                            }
                            if let Some(t) = trace.as_deref_mut() {
                                t.push(LayerTrace::Norm(cache));
                            }
                            y
                        }
                    }
                }
                Layer::Relu => {
                    let y = relu(&x);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(LayerTrace::Relu(x));
                    }
                    y
                }
            };
        }
        Ok(x)
    }

    fn run_block(&mut self, index: usize, x: Tensor, mode: BnMode, keep: bool) -> Result<(Tensor, Option<BlockTrace>)> {
        let bundle = self.bundle(index);
        let mut left_trace = Vec::new();
        let mut right_trace = Vec::new();
        let (left, right, left_channels) = match &bundle.left {
            None => {
                let half = x.shape().c / 2;
                let (l, r) = channel_split(&x, half)?;
                let r = self.run_branch(&bundle.right, r, mode, keep.then_some(&mut right_trace))?;
                (l, r, half)
            }
            Some(left_branch) => {
                let l = self.run_branch(left_branch, x.clone(), mode, keep.then_some(&mut left_trace))?;
                let r = self.run_branch(&bundle.right, x, mode, keep.then_some(&mut right_trace))?;
                let c = l.shape().c;
                (l, r, c)
            }
        };
        let y = channel_shuffle(&channel_concat(&left, &right)?, 2)?;
        let trace = keep.then(|| BlockTrace {
            left: bundle.left.as_ref().map(|_| left_trace),
            right: right_trace,
            left_channels,
        });
        Ok((y, trace))
    }

    /// Runs the path. A trace for [`PathNet::backward`] is returned only in
    /// [`BnMode::Train`].
    pub fn forward(&mut self, images: &Tensor, mode: BnMode) -> Result<(Tensor, Option<PathTrace>)> {
        let keep = mode == BnMode::Train;
        let weights = self.weights;
        let mut stem_trace = Vec::new();
        let mut x = self.run_branch(&weights.stem, images.clone(), mode, keep.then_some(&mut stem_trace))?;
        let mut blocks = Vec::new();
        for i in 0..self.arch.len() {
            let (y, t) = self.run_block(i, x, mode, keep)?;
            x = y;
            if let Some(t) = t {
                blocks.push(t);
            }
        }
        let features = x.shape();
        let pooled = global_avg_pool(&x);
        let head = weights.head(self.head);
        let logits = fully_connected(&pooled, weights.store.get(head.weight), weights.store.get(head.bias))?;
        let output = match self.head {
            HeadKind::Classification => logits,
            HeadKind::Localization => sigmoid(&logits),
        };
        output.check_finite("head output")?;
        let trace = keep.then(|| PathTrace {
            stem: stem_trace,
            blocks,
            features,
            pooled,
            output: output.clone(),
        });
        Ok((output, trace))
    }

    fn branch_backward(&self, branch: &Branch, trace: &[LayerTrace], mut dy: Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let store = &self.weights.store;
        for (layer, saved) in branch.layers.iter().zip(trace).rev() {
            dy = match (layer, saved) {
                (Layer::Conv(c), LayerTrace::Conv(input)) => {
                    let (dx, dw) = conv2d_backward(input, store.get(c.weight), &c.spec, &dy)?;
                    grads.accumulate(c.weight, &dw);
                    dx
                }
                (Layer::Norm(n), LayerTrace::Norm(cache)) => {
                    let (dx, dscale, dshift) = batch_norm_train_backward(cache, store.get(n.scale), &dy)?;
                    grads.accumulate(n.scale, &dscale);
                    grads.accumulate(n.shift, &dshift);
                    dx
                }
                (Layer::Relu, LayerTrace::Relu(input)) => relu_backward(input, &dy)?,
                _ => return Err(Error::InvalidConfiguration("trace does not match branch".into())),
            };
        }
        Ok(dy)
    }

    /// Gradients of every parameter on the path given the upstream gradient
    /// of the head output. Off-path bundles and the other head never appear.
    pub fn backward(&self, trace: &PathTrace, doutput: &Tensor) -> Result<Gradients> {
        let weights = self.weights;
        let mut grads = Gradients::new();
        let dlogits = match self.head {
            HeadKind::Classification => doutput.clone(),
            HeadKind::Localization => sigmoid_backward(&trace.output, doutput)?,
        };
        let head = weights.head(self.head);
        let (dpooled, dw, db) = fully_connected_backward(&trace.pooled, weights.store.get(head.weight), &dlogits)?;
        grads.accumulate(head.weight, &dw);
        grads.accumulate(head.bias, &db);
        let mut dx = global_avg_pool_backward(trace.features, &dpooled)?;
        for (i, bt) in trace.blocks.iter().enumerate().rev() {
            let bundle = self.bundle(i);
            let d = channel_shuffle_backward(&dx, 2)?;
            let (dl, dr) = channel_concat_backward(&d, bt.left_channels)?;
            let dr_in = self.branch_backward(&bundle.right, &bt.right, dr, &mut grads)?;
            dx = match (&bundle.left, &bt.left) {
                (None, None) => channel_concat(&dl, &dr_in)?,
                (Some(lb), Some(lt)) => {
                    let mut dl_in = self.branch_backward(lb, lt, dl, &mut grads)?;
                    dl_in.add_assign(&dr_in)?;
                    dl_in
                }
                _ => return Err(Error::InvalidConfiguration("trace does not match block".into())),
            };
        }
        self.branch_backward(&weights.stem, &trace.stem, dx, &mut grads)?;
        Ok(grads)
    }

    /// Replaces every running mean/variance on the path by the aggregate
    /// statistics of its inputs over `batches`. No parameter is touched.
    pub fn recompute_bn_statistics<'a, I>(&mut self, batches: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Tensor>,
    {
        self.calibration.clear();
        let mut seen = 0usize;
        for batch in batches {
            self.forward(batch, BnMode::Calibrate)?;
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::Empty("calibration set"));
        }
        let acc = core::mem::take(&mut self.calibration);
        for (id, stats) in acc {
            if let Some(s) = self.stats.get_mut(&id) {
                s.set_from(&stats);
            }
        }
        Ok(())
    }
}

impl Predictor for PathNet<'_> {
    fn predict(&mut self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward(images, BnMode::Eval)?.0)
    }
}

/// Fitness of `arch` with inherited weights: recompute the path's batch-norm
/// statistics on `calibration`, then score `validation` in eval mode.
pub fn evaluate_path(
    weights: &SupernetWeights,
    arch: &Architecture,
    task: &TaskSpec,
    calibration: &DatasetSplit,
    validation: &DatasetSplit,
    batch_size: usize,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let head = match task.kind {
        TaskKind::Classification { .. } => HeadKind::Classification,
        TaskKind::Localization => HeadKind::Localization,
    };
    let mut net = PathNet::new(weights, arch, head)?;
    let batches: Vec<Tensor> = calibration.batches(batch_size).map(|(x, _)| x).collect();
    net.recompute_bn_statistics(&batches)?;
    task_metric(&mut net, validation, task, batch_size)
}
