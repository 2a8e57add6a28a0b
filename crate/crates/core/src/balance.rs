//! Self-adaptive balance factor between the two empirical risks.
//!
//! `alpha = dacc^gamma`, where `dacc` is the error rate of the balanced head
//! `h` minus that of the unbalanced head `h'`, pooled over the samples of the
//! last `W` training batches and clamped to `[0, 1]`.

use alloc::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::{argmax, Tensor};
use crate::{Error, Result};

/// Correctness counts of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub correct_balanced: usize,
    pub correct_unbalanced: usize,
    pub samples: usize,
}

impl BatchStats {
    pub fn from_logits(logits_b: &Tensor, logits_u: &Tensor, labels: &[usize]) -> Result<Self> {
        let (n, _) = logits_b.dims2()?;
        if logits_u.shape() != logits_b.shape() || labels.len() != n || n == 0 {
            return Err(Error::shape("balance update", logits_b.shape(), logits_u.shape()));
        }
        let hits = |t: &Tensor| (0..n).filter(|&i| argmax(t.row(i)) == labels[i]).count();
        Ok(BatchStats {
            correct_balanced: hits(logits_b),
            correct_unbalanced: hits(logits_u),
            samples: n,
        })
    }
}

/// `x^gamma` on `[0, 1]` with `0^gamma = 0` for every `gamma`, including 0.
pub fn alpha_from_gap(gap: f64, gamma: f64) -> f64 {
    let gap = gap.clamp(0.0, 1.0);
    if gap == 0.0 {
        0.0
    } else {
        math::powf(gap, gamma)
    }
}

/// Sliding window of per-batch head correctness.
#[derive(Debug, Clone)]
pub struct BalanceState {
    window: VecDeque<BatchStats>,
    capacity: usize,
    gamma: f64,
    current_alpha: f64,
}

impl BalanceState {
    pub fn new(window: usize, gamma: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("balance window must hold at least one batch"));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::config("gamma must be a finite value ≥ 0"));
        }
        Ok(BalanceState {
            window: VecDeque::with_capacity(window),
            capacity: window,
            gamma,
            current_alpha: 0.0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.current_alpha
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// `(errors_h - errors_h') / samples` over the window, clamped to [0, 1].
    pub fn gap(&self) -> f64 {
        let (mut err_diff, mut total) = (0i64, 0usize);
        for s in &self.window {
            // errors_h - errors_h' == correct_h' - correct_h
            err_diff += s.correct_unbalanced as i64 - s.correct_balanced as i64;
            total += s.samples;
        }
        if total == 0 {
            return 0.0;
        }
        (err_diff as f64 / total as f64).clamp(0.0, 1.0)
    }

    pub fn push(&mut self, stats: BatchStats) -> f64 {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(stats);
        self.current_alpha = alpha_from_gap(self.gap(), self.gamma);
        self.current_alpha
    }

    /// Records this batch's predictions of both heads and returns the new
    /// alpha.
    pub fn update(&mut self, logits_b: &Tensor, logits_u: &Tensor, labels: &[usize]) -> Result<f64> {
        Ok(self.push(BatchStats::from_logits(logits_b, logits_u, labels)?))
    }
}

/// Where alpha comes from during a run.
#[derive(Debug, Clone)]
pub enum AlphaSource {
    Adaptive(BalanceState),
    Fixed(f64),
}

impl AlphaSource {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::config(alloc::format!("fixed alpha must be ≥ 0, got {value}")));
        }
        Ok(AlphaSource::Fixed(value))
    }

    pub fn next(&mut self, logits_b: &Tensor, logits_u: &Tensor, labels: &[usize]) -> Result<f64> {
        match self {
            AlphaSource::Adaptive(state) => state.update(logits_b, logits_u, labels),
            AlphaSource::Fixed(v) => Ok(*v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(cb: usize, cu: usize, n: usize) -> BatchStats {
        BatchStats {
            correct_balanced: cb,
            correct_unbalanced: cu,
            samples: n,
        }
    }

    #[test]
    fn agreeing_heads_give_zero() {
        let mut s = BalanceState::new(4, 2.0).unwrap();
        assert_eq!(s.push(stats(5, 5, 8)), 0.0);
    }

    #[test]
    fn full_gap_gives_one() {
        for gamma in [0.0, 0.6, 1.0, 2.0, 7.5] {
            let mut s = BalanceState::new(4, gamma).unwrap();
            assert_eq!(s.push(stats(0, 8, 8)), 1.0);
        }
    }

    #[test]
    fn quarter_gap_squared() {
        let mut s = BalanceState::new(4, 2.0).unwrap();
        assert_eq!(s.push(stats(2, 4, 8)), 0.0625);
    }

    #[test]
    fn negative_gap_clamps_to_zero() {
        let mut s = BalanceState::new(4, 0.6).unwrap();
        assert_eq!(s.push(stats(8, 0, 8)), 0.0);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut s = BalanceState::new(2, 1.0).unwrap();
        s.push(stats(0, 10, 10));
        s.push(stats(5, 5, 10));
        assert_eq!(s.alpha(), 0.5);
        s.push(stats(5, 5, 10));
        assert_eq!(s.alpha(), 0.0);
        assert_eq!(s.window_len(), 2);
    }

    #[test]
    fn update_from_logits() {
        let b = Tensor::new(alloc::vec![2, 2], alloc::vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let u = Tensor::new(alloc::vec![2, 2], alloc::vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut s = BalanceState::new(3, 1.0).unwrap();
        // h right on row 0 only, h' right on both
        assert_eq!(s.update(&b, &u, &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn fixed_source_ignores_logits() {
        let t = Tensor::zeros(&[1, 2]);
        let mut a = AlphaSource::fixed(0.25).unwrap();
        assert_eq!(a.next(&t, &t, &[0]).unwrap(), 0.25);
        assert!(AlphaSource::fixed(-1.0).is_err());
    }
}
