//! Coin-split advice: aggregate prior pool deposits from the public ledger
//! and recommend a two-way split that maximizes the bottleneck anonymity set.
//!
//! The advisor reads only public views; it needs no pool-internal secrets.
//! The objective is max over splits (a, X-a) of min(count(a), count(X-a)),
//! the anonymity set of the worse-off part.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Amount, PublicTxView, TxKind, COIN};

/// Counts of prior nonzero deposit values, rebuilt deterministically from a
/// public ledger prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositHistogram {
    counts: BTreeMap<Amount, u64>,
}

impl DepositHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one deposit value. Zero values are excluded.
    pub fn record(&mut self, value: Amount) {
        if !value.is_zero() {
            *self.counts.entry(value).or_insert(0) += 1;
        }
    }

    pub fn count(&self, value: Amount) -> u64 {
        self.counts.get(&value).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Amount, u64)> + '_ {
        self.counts.iter().map(|(a, c)| (*a, *c))
    }
}

/// Single pass over the deposit views.
pub fn build_histogram(views: &[PublicTxView]) -> DepositHistogram {
    let mut hist = DepositHistogram::new();
    for view in views {
        if view.kind == TxKind::TZ {
            for part in &view.visible_parts {
                hist.record(*part);
            }
        }
    }
    hist
}

/// Candidate grid for split enumeration plus the fallback denominations used
/// when history offers no match for any split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPolicy {
    /// Candidate split values are multiples of this step (default 0.01 ZEC).
    pub step: Amount,
    /// Round denominations tried when no split has both counts >= 1.
    pub fallback_denominations: Vec<Amount>,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy {
            step: Amount::zat(COIN / 100),
            fallback_denominations: vec![
                Amount::zat(COIN / 10),
                Amount::zat(COIN),
                Amount::zat(10 * COIN),
            ],
        }
    }
}

/// A recommended two-way split, parts ordered small then large, both always
/// positive. `score` is min(count(a), count(b)); `fallback` marks splits
/// chosen by the fallback rule because history had no matching pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecommendation {
    pub parts: (Amount, Amount),
    pub score: u64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvisorError {
    #[error("amount {0} is too small to split")]
    AmountTooSmall(Amount),
    #[error("baseline and treatment runs do not match: {0}")]
    MismatchedBaseline(String),
}

/// Pick the split (a, X-a), a on the grid and 0 < a <= X/2, maximizing
/// min(count(a), count(X-a)). Ties break toward the larger count sum, then
/// the smaller a.
pub fn recommend_split(
    amount: Amount,
    hist: &DepositHistogram,
    grid: &GridPolicy,
) -> Result<SplitRecommendation, AdvisorError> {
    let x = amount.as_zat();
    if x < 2 {
        return Err(AdvisorError::AmountTooSmall(amount));
    }
    let step = grid.step.as_zat().max(1);

    let mut best: Option<(u64, u64, u64)> = None; // (score, count sum, a)
    let mut a = step;
    while a <= x / 2 {
        let b = x - a;
        let ca = hist.count(Amount::zat(a));
        let cb = hist.count(Amount::zat(b));
        let score = ca.min(cb);
        if score > 0 {
            let key = (score, ca + cb, a);
            let better = match best {
                None => true,
                Some((bs, bsum, ba)) => {
                    (score, ca + cb) > (bs, bsum) || ((score, ca + cb) == (bs, bsum) && a < ba)
                }
            };
            if better {
                best = Some(key);
            }
        }
        a += step;
    }

    if let Some((score, _, a)) = best {
        return Ok(SplitRecommendation {
            parts: (Amount::zat(a), Amount::zat(x - a)),
            score,
            fallback: false,
        });
    }

    // Fallback: the most common round denomination <= X/2 (ties toward the
    // larger), else floor(X/2). Never a zero part.
    let a = grid
        .fallback_denominations
        .iter()
        .filter(|d| d.as_zat() > 0 && d.as_zat() <= x / 2)
        .max_by_key(|d| (hist.count(**d), d.as_zat()))
        .map(|d| d.as_zat())
        .unwrap_or(x / 2);
    let b = x - a;
    debug_assert!(a > 0 && b > 0 && a + b == x);
    Ok(SplitRecommendation {
        parts: (Amount::zat(a.min(b)), Amount::zat(a.max(b))),
        score: hist.count(Amount::zat(a)).min(hist.count(Amount::zat(b))),
        fallback: true,
    })
}

/// The request a user sends down the sealed channel to the first mix, and
/// the answer that comes back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdviceRequest {
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdviceResponse {
    pub recommendation: SplitRecommendation,
}

/// Per-deposit linkage summary extracted from a completed scenario run, the
/// input to before/after advice evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositLinkRecord {
    pub user: u64,
    pub cycle: u32,
    pub total: Amount,
    pub advised: bool,
    pub fallback: bool,
    /// True when both recommended parts had at least one prior occurrence at
    /// advice time.
    pub parts_with_prior: bool,
    /// Candidate-set size each of this deposit's withdrawals faced under the
    /// value attack (zero when a withdrawal produced no hypothesis).
    pub withdrawal_set_sizes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLinkView {
    pub seed: u64,
    pub deposits: Vec<DepositLinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositOutcome {
    pub user: u64,
    pub cycle: u32,
    pub advised: bool,
    pub fallback: bool,
    pub parts_with_prior: bool,
    pub baseline_sizes: Vec<u32>,
    pub treatment_sizes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceEvaluation {
    pub outcomes: Vec<DepositOutcome>,
    pub baseline_mean_set_size: f64,
    pub treatment_mean_set_size: f64,
}

fn mean_size(view: &RunLinkView) -> f64 {
    let sizes: Vec<u32> = view
        .deposits
        .iter()
        .flat_map(|d| d.withdrawal_set_sizes.iter().copied())
        .collect();
    if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().map(|&s| s as f64).sum::<f64>() / sizes.len() as f64
    }
}

/// Pair each advised deposit with its naive twin from the matched baseline
/// run (same seed, same workload values) and report the anonymity-set sizes
/// their withdrawals faced.
pub fn evaluate_advice(
    baseline: &RunLinkView,
    treatment: &RunLinkView,
) -> Result<AdviceEvaluation, AdvisorError> {
    if baseline.seed != treatment.seed {
        return Err(AdvisorError::MismatchedBaseline(format!(
            "seed {} vs {}",
            baseline.seed, treatment.seed
        )));
    }
    if baseline.deposits.len() != treatment.deposits.len() {
        return Err(AdvisorError::MismatchedBaseline(format!(
            "{} deposits vs {}",
            baseline.deposits.len(),
            treatment.deposits.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(baseline.deposits.len());
    for (b, t) in baseline.deposits.iter().zip(&treatment.deposits) {
        if (b.user, b.cycle, b.total) != (t.user, t.cycle, t.total) {
            return Err(AdvisorError::MismatchedBaseline(format!(
                "deposit mismatch for user {} cycle {}",
                b.user, b.cycle
            )));
        }
        outcomes.push(DepositOutcome {
            user: t.user,
            cycle: t.cycle,
            advised: t.advised,
            fallback: t.fallback,
            parts_with_prior: t.parts_with_prior,
            baseline_sizes: b.withdrawal_set_sizes.clone(),
            treatment_sizes: t.withdrawal_set_sizes.clone(),
        });
    }
    Ok(AdviceEvaluation {
        outcomes,
        baseline_mean_set_size: mean_size(baseline),
        treatment_mean_set_size: mean_size(treatment),
    })
}
