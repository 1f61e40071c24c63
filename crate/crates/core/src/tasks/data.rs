use alloc::format;
use alloc::vec::Vec;
use core::f32::consts::PI;
use core::ops::Range;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    PretrainTrain,
    PretrainValidation,
    FinetuneTrain,
    SearchValidation,
    Test,
    BnCalibration,
}

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::PretrainTrain => "pretrain_train",
            SplitRole::PretrainValidation => "pretrain_validation",
            SplitRole::FinetuneTrain => "finetune_train",
            SplitRole::SearchValidation => "search_validation",
            SplitRole::Test => "test",
            SplitRole::BnCalibration => "bn_calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    /// `(cx, cy, w, h)`, normalized by the image extent.
    Boxes(Vec<[f32; 4]>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Boxes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, indices: &[usize]) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(indices.iter().map(|&i| v[i]).collect()),
            Labels::Boxes(v) => Labels::Boxes(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    fn slice(&self, range: Range<usize>) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(v[range].to_vec()),
            Labels::Boxes(v) => Labels::Boxes(v[range].to_vec()),
        }
    }
}

/// Images with labels. `ids` are indices into the generating pool, so
/// splits cut from one pool can be checked for disjointness.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub images: Tensor,
    pub labels: Labels,
    pub ids: Vec<u64>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Labels) {
        (self.images.gather(indices), self.labels.gather(indices))
    }

    /// Contiguous sub-split `range`, relabelled as `role`.
    pub fn slice(&self, range: Range<usize>, role: SplitRole) -> Result<DatasetSplit> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::InvalidConfiguration(format!(
                "split range {range:?} outside 0..{}",
                self.len()
            )));
        }
        let indices: Vec<usize> = range.clone().collect();
        Ok(DatasetSplit {
            role,
            images: self.images.gather(&indices),
            labels: self.labels.slice(range.clone()),
            ids: self.ids[range].to_vec(),
            seed: self.seed,
        })
    }

    pub fn is_disjoint_from(&self, other: &DatasetSplit) -> bool {
        let mut a = self.ids.clone();
        a.sort_unstable();
        !other.ids.iter().any(|id| a.binary_search(id).is_ok())
    }

    pub fn is_subset_of(&self, other: &DatasetSplit) -> bool {
        let mut b = other.ids.clone();
        b.sort_unstable();
        self.ids.iter().all(|id| b.binary_search(id).is_ok())
    }

    /// Iterates the split in order as batches of at most `batch_size`.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = (Tensor, Labels)> + '_ {
        let n = self.len();
        let step = batch_size.max(1);
        (0..n.div_ceil(step)).map(move |b| {
            let idx: Vec<usize> = (b * step..((b + 1) * step).min(n)).collect();
            self.batch(&idx)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationConfig {
    pub classes: usize,
    pub count: usize,
    pub resolution: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationConfig {
    pub count: usize,
    pub resolution: usize,
    pub noise: f32,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    StandardNormal.sample(rng)
}

/// Class `c` of `k` is an oriented grating at angle `pi * c / k` with random
/// frequency, phase, colour and contrast, drawn inside a random window on a
/// speckled background. Labels cycle `0..k`, so any contiguous run is
/// balanced to within one.
pub fn generate_classification_data<R: Rng + ?Sized>(
    config: &ClassificationConfig,
    seed: u64,
    rng: &mut R,
) -> Result<DatasetSplit> {
    let k = config.classes;
    if k < 2 {
        return Err(Error::InvalidConfiguration(format!("need at least 2 classes, got {k}")));
    }
    let r = config.resolution;
    if r < 8 {
        return Err(Error::InvalidConfiguration(format!("resolution {r} below 8")));
    }
    let plane = r * r;
    let mut data = Vec::with_capacity(config.count * 3 * plane);
    let mut labels = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let class = i % k;
        let angle = PI * class as f32 / k as f32 + rng.random_range(-0.1..0.1);
        let (dx, dy) = (Float::cos(angle), Float::sin(angle));
        let freq = rng.random_range(0.12..0.3) * 2.0 * PI;
        let phase = rng.random_range(0.0..2.0 * PI);
        let contrast = rng.random_range(0.6..1.2);
        let colour: [f32; 3] = [
            rng.random_range(0.4..1.0),
            rng.random_range(0.4..1.0),
            rng.random_range(0.4..1.0),
        ];
        let win = rng.random_range(r / 2..=r);
        let (x0, y0) = (rng.random_range(0..=r - win), rng.random_range(0..=r - win));
        for &col in &colour {
            for y in 0..r {
                for x in 0..r {
                    let inside = x >= x0 && x < x0 + win && y >= y0 && y < y0 + win;
                    let base = if inside {
                        let t = (x as f32 * dx + y as f32 * dy) * freq + phase;
                        contrast * col * Float::sin(t)
                    } else {
                        0.0
                    };
                    let noise = if config.noise > 0.0 { config.noise * gaussian(rng) } else { 0.0 };
                    data.push(base + noise);
                }
            }
        }
        labels.push(class);
    }
    Ok(DatasetSplit {
        role: SplitRole::PretrainTrain,
        images: Tensor::from_vec(Shape::new(config.count, 3, r, r), data)?,
        labels: Labels::Classes(labels),
        ids: (0..config.count as u64).collect(),
        seed,
    })
}

/// One axis-aligned bright rectangle (sides at least 4 px) over a textured
/// background; labels are `(cx, cy, w, h)` normalized to `[0, 1]`.
pub fn generate_localization_data<R: Rng + ?Sized>(
    config: &LocalizationConfig,
    seed: u64,
    rng: &mut R,
) -> Result<DatasetSplit> {
    let r = config.resolution;
    if r < 16 {
        return Err(Error::InvalidConfiguration(format!("localization resolution {r} below 16")));
    }
    let plane = r * r;
    let mut data = Vec::with_capacity(config.count * 3 * plane);
    let mut labels = Vec::with_capacity(config.count);
    let max_side = (3 * r) / 4;
    for _ in 0..config.count {
        let w = rng.random_range(4..=max_side);
        let h = rng.random_range(4..=max_side);
        let x0 = rng.random_range(0..=r - w);
        let y0 = rng.random_range(0..=r - h);
        let bright = rng.random_range(0.8..1.4);
        let angle = rng.random_range(0.0..PI);
        let (dx, dy) = (Float::cos(angle), Float::sin(angle));
        let freq = rng.random_range(0.2..0.6) * 2.0 * PI;
        let phase = rng.random_range(0.0..2.0 * PI);
        let texture = rng.random_range(0.2..0.5);
        let tint: [f32; 3] = [
            rng.random_range(0.7..1.0),
            rng.random_range(0.7..1.0),
            rng.random_range(0.7..1.0),
        ];
        for &t in &tint {
            for y in 0..r {
                for x in 0..r {
                    let inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
                    let bg = texture * Float::sin((x as f32 * dx + y as f32 * dy) * freq + phase);
                    let v = if inside { bright * t } else { bg - 0.3 };
                    let noise = if config.noise > 0.0 { config.noise * gaussian(rng) } else { 0.0 };
                    data.push(v + noise);
                }
            }
        }
        let s = r as f32;
        labels.push([
            (x0 as f32 + w as f32 / 2.0) / s,
            (y0 as f32 + h as f32 / 2.0) / s,
            w as f32 / s,
            h as f32 / s,
        ]);
    }
    Ok(DatasetSplit {
        role: SplitRole::FinetuneTrain,
        images: Tensor::from_vec(Shape::new(config.count, 3, r, r), data)?,
        labels: Labels::Boxes(labels),
        ids: (0..config.count as u64).collect(),
        seed,
    })
}

/// All splits for one run, cut from two generated pools so that roles drawn
/// from the same pool never share items.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub pretrain_train: DatasetSplit,
    pub pretrain_validation: DatasetSplit,
    pub finetune_train: DatasetSplit,
    pub search_validation: DatasetSplit,
    pub test: DatasetSplit,
    pub bn_calibration: DatasetSplit,
}

impl TaskData {
    #[allow(clippy::too_many_arguments)]
    pub fn generate<R: Rng + ?Sized>(
        classification: &ClassificationConfig,
        cls_validation: usize,
        localization: &LocalizationConfig,
        search_validation: usize,
        test: usize,
        bn_calibration: usize,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let cls_train = classification.count;
        let pool = generate_classification_data(
            &ClassificationConfig {
                count: cls_train + cls_validation,
                ..*classification
            },
            seed,
            rng,
        )?;
        let loc_train = localization.count;
        if bn_calibration == 0 || bn_calibration > loc_train {
            return Err(Error::InvalidConfiguration(format!(
                "bn_calibration size {bn_calibration} must be in 1..={loc_train}"
            )));
        }
        let loc_pool = generate_localization_data(
            &LocalizationConfig {
                count: loc_train + search_validation + test,
                ..*localization
            },
            seed,
            rng,
        )?;
        let data = Self {
            pretrain_train: pool.slice(0..cls_train, SplitRole::PretrainTrain)?,
            pretrain_validation: pool
                .slice(cls_train..cls_train + cls_validation, SplitRole::PretrainValidation)?,
            finetune_train: loc_pool.slice(0..loc_train, SplitRole::FinetuneTrain)?,
            search_validation: loc_pool.slice(
                loc_train..loc_train + search_validation,
                SplitRole::SearchValidation,
            )?,
            test: loc_pool.slice(
                loc_train + search_validation..loc_train + search_validation + test,
                SplitRole::Test,
            )?,
            bn_calibration: loc_pool.slice(0..bn_calibration, SplitRole::BnCalibration)?,
        };
        if !data.finetune_train.is_disjoint_from(&data.search_validation)
            || !data.bn_calibration.is_subset_of(&data.finetune_train)
        {
            return Err(Error::InvalidConfiguration("split construction overlaps".into()));
        }
        Ok(data)
    }
}
