//! Rank comparison metrics and the paired t-test.
//!
//! All metrics take a `reference` order (ground truth) and a `predicted`
//! order and only look at questions present in both. AP correlation and
//! NDPM are not symmetric in their arguments; Spearman's rho is.

use std::collections::HashMap;
use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{Comparison, PartialOrder, QuestionId};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("degenerate t-test: all paired differences are identical")]
    Degenerate,
    #[error("invalid t-test input: {0}")]
    InvalidInput(String),
}

/// A rank correlation in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RankCorrelation(f64);

impl RankCorrelation {
    fn clamped(value: f64) -> Self {
        RankCorrelation(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for RankCorrelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn common_restrictions(reference: &PartialOrder, predicted: &PartialOrder) -> (PartialOrder, PartialOrder) {
    (
        reference.restrict(|q| predicted.contains(q)),
        predicted.restrict(|q| reference.contains(q)),
    )
}

/// Fenwick tree counting how many reference positions below `i` were seen.
struct PrefixCounter(Vec<u32>);

impl PrefixCounter {
    fn new(n: usize) -> Self {
        PrefixCounter(vec![0; n + 1])
    }

    fn insert(&mut self, pos: usize) {
        let mut i = pos + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted positions strictly below `pos`.
    fn count_below(&self, pos: usize) -> u32 {
        let mut i = pos;
        let mut total = 0;
        while i > 0 {
            total += self.0[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// AP rank correlation (τ_AP).
///
/// Both orders are linearized (ties by ascending id) over their common
/// questions. Walking the prediction top-down, each item `i` at position
/// `p ≥ 1` contributes the fraction of the `p` items above it that the
/// reference also places above it:
///
/// ```text
/// τ_AP = 2/(N-1) · Σ_{p=1}^{N-1} C(p)/p − 1
/// ```
///
/// Mistakes near the top of the prediction weigh more because their
/// denominators are small.
pub fn ap_correlation(
    reference: &PartialOrder,
    predicted: &PartialOrder,
) -> Result<RankCorrelation, MetricError> {
    let (reference, predicted) = common_restrictions(reference, predicted);
    let n = reference.len();
    if n < 2 {
        return Err(MetricError::Undefined(format!(
            "AP correlation needs at least 2 common items, found {n}"
        )));
    }
    let reference_pos: HashMap<QuestionId, usize> = reference
        .linearize()
        .into_iter()
        .enumerate()
        .map(|(i, q)| (q, i))
        .collect();

    let mut seen = PrefixCounter::new(n);
    let mut sum = 0.0;
    for (p, q) in predicted.linearize().iter().enumerate() {
        let pos = reference_pos[q];
        if p > 0 {
            sum += seen.count_below(pos) as f64 / p as f64;
        }
        seen.insert(pos);
    }
    Ok(RankCorrelation::clamped(2.0 / (n - 1) as f64 * sum - 1.0))
}

/// Normalized distance-based performance measure.
///
/// Over the pairs the reference orders strictly, a pair predicted in the
/// opposite order costs 2 and a pair tied in the prediction costs 1; the
/// total is divided by twice the number of such pairs. 0 is perfect
/// agreement, 1 full reversal. Ties in the prediction are kept as ties.
pub fn ndpm(reference: &PartialOrder, predicted: &PartialOrder) -> Result<f64, MetricError> {
    let items: Vec<QuestionId> = reference
        .linearize()
        .into_iter()
        .filter(|q| predicted.contains(q))
        .collect();

    let (mut contradicted, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            let truth = reference.compare(a, b);
            if truth == Comparison::TiedOrIncomparable {
                continue;
            }
            comparable += 1;
            match predicted.compare(a, b) {
                Comparison::TiedOrIncomparable => tied += 1,
                p if p != truth => contradicted += 1,
                _ => {}
            }
        }
    }
    if comparable == 0 {
        return Err(MetricError::Undefined(
            "NDPM needs at least one pair ordered by the reference".into(),
        ));
    }
    Ok((2 * contradicted + tied) as f64 / (2 * comparable) as f64)
}

/// 1-based ranks, most difficult first, tied questions sharing the mean of
/// the positions their group spans.
pub fn average_ranks(order: &PartialOrder) -> HashMap<QuestionId, f64> {
    let mut ranks = HashMap::with_capacity(order.len());
    let mut start = 0usize;
    for group in order.groups() {
        let rank = start as f64 + (group.len() as f64 + 1.0) / 2.0;
        for q in group {
            ranks.insert(q.clone(), rank);
        }
        start += group.len();
    }
    ranks
}

/// Spearman's rho, `1 − 6 Σ d² / (n (n² − 1))`, with average ranks for ties.
pub fn spearman_rho(
    reference: &PartialOrder,
    predicted: &PartialOrder,
) -> Result<RankCorrelation, MetricError> {
    if reference.items() != predicted.items() {
        return Err(MetricError::Undefined(
            "Spearman's rho needs both orders over the same questions".into(),
        ));
    }
    let n = reference.len();
    if n < 2 {
        return Err(MetricError::Undefined(format!(
            "Spearman's rho needs at least 2 items, found {n}"
        )));
    }
    let reference_ranks = average_ranks(reference);
    let predicted_ranks = average_ranks(predicted);
    let sum_sq: f64 = reference_ranks
        .iter()
        .map(|(q, r)| {
            let d = r - predicted_ranks[q];
            d * d
        })
        .sum();
    let n = n as f64;
    Ok(RankCorrelation::clamped(1.0 - 6.0 * sum_sq / (n * (n * n - 1.0))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: u32,
    /// Two-sided critical value at the configured alpha.
    pub t_critical: f64,
    pub p_value: f64,
    pub mean_difference: f64,
    pub reject_null: bool,
}

/// Two-sided paired t-test on `first − second`.
pub fn paired_t_test(pairs: &[(f64, f64)], alpha: f64) -> Result<TTestResult, MetricError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricError::InvalidInput(format!("alpha {alpha} outside (0, 1)")));
    }
    if pairs.len() < 2 {
        return Err(MetricError::InvalidInput(format!(
            "need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(MetricError::InvalidInput("non-finite observation".into()));
    }
    if diffs.iter().all(|d| *d == diffs[0]) {
        return Err(MetricError::Degenerate);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let variance = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = variance.sqrt();
    if sd == 0.0 {
        return Err(MetricError::Degenerate);
    }
    let t = mean / (sd / n.sqrt());
    let dof = pairs.len() as u32 - 1;
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom");
    let t_critical = dist.inverse_cdf(1.0 - alpha / 2.0);
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        t_critical,
        p_value,
        mean_difference: mean,
        reject_null: t.abs() > t_critical,
    })
}
