//! Split accuracies and the geometric diagnostics used to compare runs:
//! classifier weight norms, intra/inter-class cosine distance ratio and the
//! contrastive domain divergence between train and test features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{LongTailDataset, Split};
use crate::math;
use crate::model::LdaModel;
use crate::tape::cosine_raw;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Class groups by training count: many `> many_above`, few `< few_below`,
/// medium otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub many_above: usize,
    pub few_below: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            many_above: 100,
            few_below: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shot {
    Many,
    Medium,
    Few,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.few_below > self.many_above + 1 {
            return Err(Error::config(format!(
                "few threshold {} overlaps many threshold {}",
                self.few_below, self.many_above
            )));
        }
        Ok(())
    }

    pub fn classify(&self, count: usize) -> Shot {
        if count > self.many_above {
            Shot::Many
        } else if count < self.few_below {
            Shot::Few
        } else {
            Shot::Medium
        }
    }

    pub fn groups(&self, counts: &[usize]) -> Vec<Shot> {
        counts.iter().map(|&k| self.classify(k)).collect()
    }
}

/// Top-1 accuracy overall and per shot group; a group with no classes is
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub overall: f64,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: Accuracies,
    /// `confusion[true][predicted]` over the test split.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy of `predictions` against `labels`, grouped by each class's
/// training count. Group accuracy is the sample mean within the group.
pub fn accuracies_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    class_counts: &[usize],
    spec: &SplitSpec,
) -> Result<Evaluation> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Undefined("no test rows to evaluate".into()));
    }
    let c = class_counts.len();
    let groups = spec.groups(class_counts);
    let mut confusion = vec![vec![0usize; c]; c];
    let mut hit = [0usize; 3];
    let mut seen = [0usize; 3];
    let slot = |s: Shot| match s {
        Shot::Many => 0,
        Shot::Medium => 1,
        Shot::Few => 2,
    };
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= c || p >= c {
            return Err(Error::Label {
                label: y.max(p),
                classes: c,
            });
        }
        confusion[y][p] += 1;
        let g = slot(groups[y]);
        seen[g] += 1;
        if p == y {
            hit[g] += 1;
        }
    }
    let ratio = |g: usize| (seen[g] > 0).then(|| hit[g] as f64 / seen[g] as f64);
    let total_hit: usize = hit.iter().sum();
    Ok(Evaluation {
        accuracy: Accuracies {
            overall: total_hit as f64 / labels.len() as f64,
            many: ratio(0),
            medium: ratio(1),
            few: ratio(2),
        },
        confusion,
    })
}

/// Predicts the test split with the balanced classifier and scores it.
pub fn evaluate(model: &LdaModel, dataset: &LongTailDataset, spec: &SplitSpec) -> Result<Evaluation> {
    let (x, y) = dataset.split_data(Split::Test)?;
    if y.is_empty() {
        return Err(Error::Undefined("dataset has no test split".into()));
    }
    let pred = model.predict(&x)?;
    accuracies_from_predictions(&pred, &y, dataset.class_counts(), spec)
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    math::sqrt(var) / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierNorms {
    pub norms: Vec<f64>,
    pub cv: f64,
}

impl ClassifierNorms {
    fn of(layer: &crate::model::Linear) -> Self {
        let norms: Vec<f64> = (0..layer.fan_out())
            .map(|c| crate::tape::norm(&layer.unit_weights(c)))
            .collect();
        let cv = coefficient_of_variation(&norms);
        ClassifierNorms { norms, cv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNorms {
    pub balanced: ClassifierNorms,
    pub unbalanced: Option<ClassifierNorms>,
}

/// `||w_c||` of every class vector of `h` (and `h'` when present).
pub fn weight_norms(model: &LdaModel) -> WeightNorms {
    WeightNorms {
        balanced: ClassifierNorms::of(&model.head_balanced),
        unbalanced: model.head_unbalanced.as_ref().map(ClassifierNorms::of),
    }
}

fn class_rows(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y < num_classes {
            rows[y].push(i);
        }
    }
    rows
}

fn mean_of_rows(x: &Tensor, rows: &[usize]) -> Vec<f64> {
    let d = x.shape()[1];
    let mut m = vec![0.0; d];
    for &r in rows {
        for (s, v) in m.iter_mut().zip(x.row(r)) {
            *s += v;
        }
    }
    m.iter_mut().for_each(|s| *s /= rows.len() as f64);
    m
}

/// Mean per-class intra distance over mean pairwise inter-center distance,
/// both in cosine distance.
pub fn intra_inter_ratio_features(features: &Tensor, labels: &[usize], num_classes: usize) -> Result<f64> {
    features.dims2()?;
    if labels.len() != features.shape()[0] {
        return Err(Error::shape("intra_inter_ratio", features.shape(), &[labels.len()]));
    }
    let rows: Vec<Vec<usize>> = class_rows(labels, num_classes)
        .into_iter()
        .filter(|r| !r.is_empty())
        .collect();
    if rows.len() < 2 {
        return Err(Error::Undefined("intra/inter ratio needs at least 2 classes".into()));
    }
    let centers: Vec<Vec<f64>> = rows.iter().map(|r| mean_of_rows(features, r)).collect();
    let intra = rows
        .iter()
        .zip(&centers)
        .map(|(r, mu)| {
            r.iter().map(|&i| 1.0 - cosine_raw(features.row(i), mu)).sum::<f64>() / r.len() as f64
        })
        .sum::<f64>()
        / rows.len() as f64;
    let k = centers.len();
    let mut inter = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                inter += 1.0 - cosine_raw(&centers[i], &centers[j]);
            }
        }
    }
    inter /= (k * (k - 1)) as f64;
    if inter <= 1e-12 {
        return Err(Error::Undefined("inter-class distance is zero".into()));
    }
    Ok(intra / inter)
}

/// Ratio on the test split in the embedding space of the model.
pub fn intra_inter_ratio(model: &LdaModel, dataset: &LongTailDataset) -> Result<f64> {
    let (x, y) = dataset.split_data(Split::Test)?;
    if y.is_empty() {
        return Err(Error::Undefined("dataset has no test split".into()));
    }
    let f = model.embeddings(&x)?;
    intra_inter_ratio_features(&f, &y, dataset.num_classes())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of pairwise squared distances over the rows of both sets.
pub fn median_sq_distance(a: &Tensor, b: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..a.shape()[0])
        .map(|i| a.row(i))
        .chain((0..b.shape()[0]).map(|i| b.row(i)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    *m
}

/// Gaussian kernel `exp(-|a-b|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub sigma_sq: f64,
}

impl GaussianKernel {
    /// Bandwidth from the median heuristic; falls back to 1 for degenerate
    /// (all-identical) data.
    pub fn median_heuristic(a: &Tensor, b: &Tensor) -> Self {
        let m = median_sq_distance(a, b);
        GaussianKernel {
            sigma_sq: if m > 0.0 { m } else { 1.0 },
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        math::exp(-sq_dist(a, b) / (2.0 * self.sigma_sq))
    }

    fn mean_cross(&self, x: &Tensor, xr: &[usize], y: &Tensor, yr: &[usize]) -> f64 {
        let mut s = 0.0;
        for &i in xr {
            for &j in yr {
                s += self.eval(x.row(i), y.row(j));
            }
        }
        s / (xr.len() * yr.len()) as f64
    }
}

/// Biased (V-statistic) estimate of squared MMD between two row sets.
/// Symmetric, nonnegative, zero for identical sets.
pub fn mmd_sq(kernel: &GaussianKernel, x: &Tensor, y: &Tensor) -> f64 {
    let xr: Vec<usize> = (0..x.shape()[0]).collect();
    let yr: Vec<usize> = (0..y.shape()[0]).collect();
    kernel.mean_cross(x, &xr, x, &xr) + kernel.mean_cross(y, &yr, y, &yr)
        - 2.0 * kernel.mean_cross(x, &xr, y, &yr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CddReport {
    pub value: f64,
    /// Classes missing from one side and therefore left out.
    pub skipped_classes: usize,
}

/// Contrastive domain divergence: mean same-class MMD² between the domains
/// minus mean different-class MMD², Gaussian kernel with median bandwidth.
pub fn contrastive_domain_divergence(
    train: &Tensor,
    train_labels: &[usize],
    test: &Tensor,
    test_labels: &[usize],
    num_classes: usize,
) -> Result<CddReport> {
    let (_, d1) = train.dims2()?;
    let (_, d2) = test.dims2()?;
    if d1 != d2 {
        return Err(Error::shape("cdd", train.shape(), test.shape()));
    }
    if train_labels.is_empty() || test_labels.is_empty() {
        return Err(Error::Undefined("divergence needs both domains nonempty".into()));
    }
    let kernel = GaussianKernel::median_heuristic(train, test);
    let tr = class_rows(train_labels, num_classes);
    let te = class_rows(test_labels, num_classes);
    let present: Vec<usize> = (0..num_classes)
        .filter(|&c| !tr[c].is_empty() && !te[c].is_empty())
        .collect();
    let skipped = (0..num_classes)
        .filter(|&c| !tr[c].is_empty() || !te[c].is_empty())
        .count()
        - present.len();
    if present.len() < 2 {
        return Err(Error::Undefined("divergence needs 2 classes on both sides".into()));
    }
    let k_tr: Vec<f64> = present
        .iter()
        .map(|&c| kernel.mean_cross(train, &tr[c], train, &tr[c]))
        .collect();
    let k_te: Vec<f64> = present
        .iter()
        .map(|&c| kernel.mean_cross(test, &te[c], test, &te[c]))
        .collect();
    let (mut same, mut diff) = (0.0, 0.0);
    for (a, &ca) in present.iter().enumerate() {
        for (b, &cb) in present.iter().enumerate() {
            let cross = kernel.mean_cross(train, &tr[ca], test, &te[cb]);
            let mmd = k_tr[a] + k_te[b] - 2.0 * cross;
            if a == b {
                same += mmd;
            } else {
                diff += mmd;
            }
        }
    }
    let k = present.len() as f64;
    Ok(CddReport {
        value: same / k - diff / (k * (k - 1.0)),
        skipped_classes: skipped,
    })
}

/// Divergence between the model's train and test embeddings.
pub fn model_cdd(model: &LdaModel, dataset: &LongTailDataset) -> Result<CddReport> {
    let (xt, yt) = dataset.split_data(Split::Train)?;
    let (xs, ys) = dataset.split_data(Split::Test)?;
    let ft = model.embeddings(&xt)?;
    let fs = model.embeddings(&xs)?;
    contrastive_domain_divergence(&ft, &yt, &fs, &ys, dataset.num_classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub accuracy: Accuracies,
    pub weight_norms: WeightNorms,
    /// `None` when the ratio is undefined (degenerate centers).
    pub intra_over_inter: Option<f64>,
    pub cdd: Option<CddReport>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn diagnostics(model: &LdaModel, dataset: &LongTailDataset, spec: &SplitSpec) -> Result<DiagnosticsReport> {
    let eval = evaluate(model, dataset, spec)?;
    let ratio = match intra_inter_ratio(model, dataset) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let cdd = match model_cdd(model, dataset) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(DiagnosticsReport {
        accuracy: eval.accuracy,
        weight_norms: weight_norms(model),
        intra_over_inter: ratio,
        cdd,
        confusion: eval.confusion,
    })
}
