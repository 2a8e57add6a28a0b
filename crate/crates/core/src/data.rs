//! Long-tailed datasets: imbalance profiles, a seeded Gaussian-mixture
//! generator and the two training samplers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Class-count profile of a long-tailed training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub num_classes: usize,
    pub max_count: usize,
    pub imbalance_ratio: f64,
}

impl ImbalanceProfile {
    pub fn counts(&self) -> Result<Vec<usize>> {
        make_profile(self.num_classes, self.max_count, self.imbalance_ratio)
    }
}

/// Exponentially decaying class counts `round(n_max * IR^(-c/(C-1)))`,
/// each at least 1. Class 0 is the head.
pub fn make_profile(num_classes: usize, max_count: usize, ir: f64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::config("need at least 2 classes"));
    }
    if !(ir >= 1.0) || !ir.is_finite() {
        return Err(Error::config(format!("IR must be ≥ 1 (got {ir})")));
    }
    if (max_count as f64) < ir {
        return Err(Error::config(format!(
            "max count {max_count} must be ≥ IR {ir}"
        )));
    }
    let last = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|c| {
            let n = max_count as f64 * math::powf(ir, -(c as f64) / last);
            (math::round(n) as usize).max(1)
        })
        .collect())
}

/// Feature matrix with integer labels and a train/test tag per row.
///
/// The training split is long-tailed; the test split holds the same number of
/// rows for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailDataset {
    features: Tensor,
    labels: Vec<usize>,
    split: Vec<Split>,
    num_classes: usize,
    class_counts: Vec<usize>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

impl LongTailDataset {
    /// Validates and assembles a dataset. `features` is `n x dim` row-major.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        split: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if dim == 0 {
            return Err(Error::config("feature dimension must be ≥ 1"));
        }
        if split.len() != n {
            return Err(Error::shape("dataset split", &[split.len()], &[n]));
        }
        let features = Tensor::new(vec![n, dim], features)?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                classes: num_classes,
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        let mut test_counts = vec![0usize; num_classes];
        let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
        for (i, (&y, &s)) in labels.iter().zip(&split).enumerate() {
            match s {
                Split::Train => {
                    class_counts[y] += 1;
                    train_idx.push(i);
                }
                Split::Test => {
                    test_counts[y] += 1;
                    test_idx.push(i);
                }
            }
        }
        if let Some(c) = class_counts.iter().position(|&k| k == 0) {
            return Err(Error::config(format!("class {c} has no training rows")));
        }
        if test_counts.iter().any(|&k| k != test_counts[0]) {
            return Err(Error::config(format!(
                "test split must be balanced, got per-class counts {test_counts:?}"
            )));
        }
        Ok(LongTailDataset {
            features,
            labels,
            split,
            num_classes,
            class_counts,
            train_idx,
            test_idx,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Training occurrences per class.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test_idx
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_idx,
            Split::Test => &self.test_idx,
        }
    }

    /// Test rows per class (identical for every class).
    pub fn test_per_class(&self) -> usize {
        self.test_idx.len() / self.num_classes
    }

    /// Empirical training prior `p_u(y)`.
    pub fn class_prior(&self) -> Vec<f64> {
        let total = self.train_idx.len() as f64;
        self.class_counts
            .iter()
            .map(|&k| k as f64 / total)
            .collect()
    }

    /// Feature rows and labels for the given row indices.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(idx)?;
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn split_data(&self, split: Split) -> Result<(Tensor, Vec<usize>)> {
        self.gather(self.indices(split))
    }
}

/// Parameters of the synthetic Gaussian-mixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub profile: ImbalanceProfile,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub test_per_class: usize,
}

// ChaCha stream ids; each part of the generator draws from its own stream.
const STREAM_MEANS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Isotropic Gaussian per class around a random direction of norm
/// `center_scale`. Train rows follow the profile; test rows are balanced.
pub fn synth_gaussian(cfg: &SynthConfig) -> Result<LongTailDataset> {
    if cfg.dim < 2 {
        return Err(Error::config("dim must be ≥ 2"));
    }
    if cfg.test_per_class < 1 {
        return Err(Error::config("test_per_class must be ≥ 1"));
    }
    if !(cfg.noise_sigma >= 0.0) || !(cfg.center_scale >= 0.0) {
        return Err(Error::config("noise_sigma and center_scale must be ≥ 0"));
    }
    let counts = cfg.profile.counts()?;
    let c = cfg.profile.num_classes;
    let d = cfg.dim;

    let mut rng = stream_rng(cfg.seed, STREAM_MEANS);
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = crate::tape::norm(&v);
            if n > 1e-6 {
                break v.iter().map(|x| x / n * cfg.center_scale).collect();
            }
        })
        .collect();

    let total_train: usize = counts.iter().sum();
    let n = total_train + c * cfg.test_per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    let mut emit = |rng: &mut ChaCha8Rng, class: usize, tag: Split| {
        for &m in &means[class] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + cfg.noise_sigma * z);
        }
        labels.push(class);
        split.push(tag);
    };
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    for (class, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            emit(&mut rng, class, Split::Train);
        }
    }
    let mut rng = stream_rng(cfg.seed, STREAM_TEST);
    for class in 0..c {
        for _ in 0..cfg.test_per_class {
            emit(&mut rng, class, Split::Test);
        }
    }
    LongTailDataset::new(features, d, labels, split, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Uniform over training rows, without replacement within an epoch.
    InstanceRandom,
    /// Uniform class, then a uniform row of that class, with replacement.
    ClassBalanced,
}

/// Seeded mini-batch sampler over the training split.
#[derive(Debug, Clone)]
pub struct Sampler {
    mode: SamplerMode,
    batch_size: usize,
    train_idx: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(
        dataset: &LongTailDataset,
        mode: SamplerMode,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = dataset.train_indices().len();
        if batch_size == 0 || batch_size > n {
            return Err(Error::config(format!(
                "batch size {batch_size} must be in [1, {n}]"
            )));
        }
        let mut by_class = vec![Vec::new(); dataset.num_classes()];
        for &i in dataset.train_indices() {
            by_class[dataset.labels()[i]].push(i);
        }
        Ok(Sampler {
            mode,
            batch_size,
            train_idx: dataset.train_indices().to_vec(),
            by_class,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    /// Batches per epoch: `ceil(train rows / batch size)` in both modes.
    pub fn batches_per_epoch(&self) -> usize {
        self.train_idx.len().div_ceil(self.batch_size)
    }

    /// Row indices of every batch in the next epoch. The last batch may be
    /// short.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        match self.mode {
            SamplerMode::InstanceRandom => {
                let mut order = self.train_idx.clone();
                order.shuffle(&mut self.rng);
                order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
            }
            SamplerMode::ClassBalanced => {
                let total = self.train_idx.len();
                let c = self.by_class.len();
                let mut out = Vec::with_capacity(self.batches_per_epoch());
                let mut drawn = 0;
                while drawn < total {
                    let size = self.batch_size.min(total - drawn);
                    let batch = (0..size)
                        .map(|_| {
                            let members = &self.by_class[self.rng.random_range(0..c)];
                            members[self.rng.random_range(0..members.len())]
                        })
                        .collect();
                    out.push(batch);
                    drawn += size;
                }
                out
            }
        }
    }
}
