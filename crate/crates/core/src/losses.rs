//! Loss terms of the joint objective.
//!
//! `total = eps_u + alpha * eps_b + beta * (l_intra + l_inter)` where `eps_u`
//! is plain cross-entropy of `h'`, `eps_b` the `1/p_u(y)`-weighted
//! cross-entropy of `h`, and the two regularizers act on cosine geometry of
//! the projected features.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tape::{Tape, Var, EPS_LOG};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Per-class importance weights `w[c] = 1 / p_u(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || counts.iter().any(|&k| k == 0) {
            return Err(Error::config(format!(
                "class weights need every count ≥ 1, got {counts:?}"
            )));
        }
        let total = total as f64;
        Ok(ClassWeights(
            counts.iter().map(|&k| 1.0 / (k as f64 / total)).collect(),
        ))
    }

    pub fn uniform(num_classes: usize, value: f64) -> Self {
        ClassWeights(alloc::vec![value; num_classes])
    }

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::config("class weights must be > 0"));
        }
        Ok(ClassWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-sample cross-entropy `-log p(y_i)`, probabilities floored at `EPS_LOG`.
pub fn cross_entropy_terms(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, _) = tape.value(logits).dims2()?;
    if n == 0 || labels.len() != n {
        return Err(Error::shape("cross_entropy", tape.value(logits).shape(), &[labels.len()]));
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.pick(logp, labels)?;
    let floored = tape.clamp_min(picked, math::ln(EPS_LOG));
    Ok(tape.scale(floored, -1.0))
}

/// Mean cross-entropy over the batch.
pub fn unbalanced_risk(tape: &mut Tape, logits_u: Var, labels: &[usize]) -> Result<Var> {
    let ce = cross_entropy_terms(tape, logits_u, labels)?;
    Ok(tape.mean(ce))
}

/// `(1/N) * sum_i w[y_i] * CE_i`, normalized by batch size rather than by the
/// weight total.
pub fn balanced_risk(
    tape: &mut Tape,
    logits_b: Var,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<Var> {
    let classes = tape.value(logits_b).dims2()?.1;
    if weights.len() != classes {
        return Err(Error::shape("balanced_risk", &[classes], &[weights.len()]));
    }
    let ce = cross_entropy_terms(tape, logits_b, labels)?;
    let w = labels.iter().map(|&y| weights.as_slice()[y]).collect();
    let w = tape.constant(Tensor::vector(w));
    let weighted = tape.mul(ce, w)?;
    Ok(tape.mean(weighted))
}

/// Feature centers of the classes present in a batch.
#[derive(Debug, Clone)]
pub struct BatchCenters {
    features: Var,
    classes: Vec<usize>,
    members: Vec<Vec<usize>>,
    centers: Vec<Var>,
}

impl BatchCenters {
    /// Present class ids in ascending order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Batch rows belonging to each present class.
    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn centers(&self) -> &[Var] {
        &self.centers
    }

    pub fn center_of(&self, class: usize) -> Option<Var> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|k| self.centers[k])
    }
}

/// `mu_c = mean of F_i over batch members of c`, for every present class.
pub fn compute_centers(tape: &mut Tape, features: Var, labels: &[usize]) -> Result<BatchCenters> {
    let (n, _) = tape.value(features).dims2()?;
    if n == 0 || labels.len() != n {
        return Err(Error::shape("compute_centers", tape.value(features).shape(), &[labels.len()]));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    let centers = members
        .iter()
        .map(|rows| tape.mean_rows(features, rows))
        .collect::<Result<_>>()?;
    Ok(BatchCenters {
        features,
        classes,
        members,
        centers,
    })
}

/// Mean over present classes of the mean cosine distance `1 - cos(F_i, mu_c)`.
/// Single-member classes contribute exactly 0.
pub fn intra_loss(tape: &mut Tape, centers: &BatchCenters) -> Result<Var> {
    let mut per_class = Vec::with_capacity(centers.classes.len());
    for (rows, &mu) in centers.members.iter().zip(&centers.centers) {
        if rows.len() == 1 {
            per_class.push(tape.constant(Tensor::scalar(0.0)));
            continue;
        }
        let mut cos = Vec::with_capacity(rows.len());
        for &i in rows {
            let f = tape.row(centers.features, i)?;
            cos.push(tape.cosine(f, mu)?);
        }
        let cos = tape.stack(&cos)?;
        let neg = tape.scale(cos, -1.0);
        let dist = tape.shift(neg, 1.0);
        per_class.push(tape.mean(dist));
    }
    if per_class.is_empty() {
        return Err(Error::config("intra loss needs at least one class"));
    }
    let stacked = tape.stack(&per_class)?;
    Ok(tape.mean(stacked))
}

/// Weighted hinge on center distances over ordered pairs `i != j`:
/// `(w_i + w_j) * max(0, margin - (1 - cos(mu_i, mu_j)))`.
pub fn inter_loss(
    tape: &mut Tape,
    centers: &BatchCenters,
    weights: &ClassWeights,
    margin: f64,
) -> Result<Var> {
    if !(margin > 0.0 && margin <= 2.0) {
        return Err(Error::config(format!("margin must be in (0, 2], got {margin}")));
    }
    let w = weights.as_slice();
    if let Some(&bad) = centers.classes.iter().find(|&&c| c >= w.len()) {
        return Err(Error::Label {
            label: bad,
            classes: w.len(),
        });
    }
    let k = centers.classes.len();
    let mut terms = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let cos = tape.cosine(centers.centers[i], centers.centers[j])?;
            let slack = tape.shift(cos, margin - 1.0);
            let hinge = tape.relu(slack);
            // (i, j) and (j, i) contribute identically
            let omega = w[centers.classes[i]] + w[centers.classes[j]];
            terms.push(tape.scale(hinge, 2.0 * omega));
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

/// Scalar values of every term of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub eps_u: f64,
    pub eps_b: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

fn check_coefficients(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(Error::config(format!(
            "alpha and beta must be ≥ 0 (alpha={alpha}, beta={beta})"
        )));
    }
    Ok(())
}

pub fn total_loss(
    eps_u: f64,
    eps_b: f64,
    l_intra: f64,
    l_inter: f64,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    check_coefficients(alpha, beta)?;
    Ok(LossBreakdown {
        eps_u,
        eps_b,
        l_intra,
        l_inter,
        alpha,
        beta,
        total: (eps_u + alpha * eps_b) + beta * (l_intra + l_inter),
    })
}

/// Tape version of [`total_loss`] with the same operation order, so the two
/// agree bit for bit.
pub fn combine(
    tape: &mut Tape,
    eps_u: Var,
    eps_b: Var,
    l_intra: Var,
    l_inter: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    check_coefficients(alpha, beta)?;
    let weighted_b = tape.scale(eps_b, alpha);
    let risks = tape.add(eps_u, weighted_b)?;
    let reg = tape.add(l_intra, l_inter)?;
    let weighted_reg = tape.scale(reg, beta);
    tape.add(risks, weighted_reg)
}
