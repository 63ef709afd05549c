//! The two attacks against the public ledger and the broadcast trace, scored
//! against simulator ground truth.
//!
//! The value attack matches each withdrawal against earlier deposit values;
//! a link is asserted only when the candidate set is a singleton. The network
//! attack clusters transactions by broadcasting address. Both are scored with
//! precision/recall and anonymity-set statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Amount, PublicTxView, TxId, TxKind};
use crate::network::{BroadcastEvent, NetAddr};

/// A candidate (deposit, withdrawal) link together with the size of the
/// candidate set the withdrawal faced. `set_size == 1` is an asserted link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkHypothesis {
    pub deposit: TxId,
    pub withdrawal: TxId,
    pub set_size: u32,
}

impl LinkHypothesis {
    pub fn asserted(&self) -> bool {
        self.set_size == 1
    }
}

/// Transactions grouped by the network address that first broadcast them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCluster {
    pub origin: NetAddr,
    pub txs: BTreeSet<TxId>,
}

/// Attack quality against ground truth plus anonymity-set statistics.
/// `undefined` flags scores whose denominator was empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub precision: f64,
    pub recall: f64,
    pub mean_set_size: f64,
    pub median_set_size: f64,
    pub mean_entropy_bits: f64,
    pub undefined: bool,
}

/// What the simulator knows and the attacker does not: which user originated
/// each transaction, the true deposit-withdrawal pairs, and which deposits
/// used the naive zero-value second output.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_of_tx: BTreeMap<TxId, NetAddr>,
    pub true_pairs: BTreeSet<(TxId, TxId)>,
    pub naive_deposits: BTreeSet<TxId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("hypothesis references unknown transaction id {0:?}")]
    UnknownTxId(TxId),
}

struct OpenPart {
    deposit: TxId,
    timestamp: crate::network::Ticks,
    consumed: bool,
}

/// The application-layer attack: for each withdrawal of amount `v`, the
/// candidate set is every earlier deposit value of `v` not yet uniquely
/// consumed. Intermediate ZZ hops are invisible, so the attack links deposit
/// to withdrawal across any chain length.
pub fn link_by_value(views: &[PublicTxView]) -> Vec<LinkHypothesis> {
    let mut ordered: Vec<&PublicTxView> = views.iter().collect();
    ordered.sort_by_key(|v| (v.timestamp, v.tx_id));

    // Open deposit values, indexed by amount.
    let mut parts: Vec<OpenPart> = Vec::new();
    let mut by_value: BTreeMap<Amount, Vec<usize>> = BTreeMap::new();
    let mut hypotheses = Vec::new();

    for view in ordered {
        match view.kind {
            TxKind::TZ => {
                for value in &view.visible_parts {
                    let idx = parts.len();
                    parts.push(OpenPart {
                        deposit: view.tx_id,
                        timestamp: view.timestamp,
                        consumed: false,
                    });
                    by_value.entry(*value).or_default().push(idx);
                }
            }
            TxKind::ZT => {
                let Some(v) = view.visible_amount else { continue };
                let candidates: Vec<usize> = by_value
                    .get(&v)
                    .map(|idxs| {
                        idxs.iter()
                            .copied()
                            .filter(|&i| {
                                !parts[i].consumed && parts[i].timestamp < view.timestamp
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                if candidates.is_empty() {
                    continue;
                }
                let set_size = candidates.len() as u32;
                let mut seen = BTreeSet::new();
                for &i in &candidates {
                    if seen.insert(parts[i].deposit) {
                        hypotheses.push(LinkHypothesis {
                            deposit: parts[i].deposit,
                            withdrawal: view.tx_id,
                            set_size,
                        });
                    }
                }
                if set_size == 1 {
                    parts[candidates[0]].consumed = true;
                }
            }
            TxKind::TT | TxKind::ZZ => {}
        }
    }
    hypotheses
}

fn stats(sizes: &[u32]) -> (f64, f64, f64) {
    if sizes.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mean = sorted.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    let entropy = sorted.iter().map(|&s| (s as f64).log2()).sum::<f64>() / n as f64;
    (mean, median, entropy)
}

/// Score value-attack hypotheses against ground truth. Entropy per withdrawal
/// is log2 of its candidate-set size under the uniform-candidate assumption.
pub fn score(hypotheses: &[LinkHypothesis], truth: &GroundTruth) -> Result<AttackScore, ScoreError> {
    for h in hypotheses {
        for id in [h.deposit, h.withdrawal] {
            if !truth.user_of_tx.contains_key(&id) {
                return Err(ScoreError::UnknownTxId(id));
            }
        }
    }
    let asserted: Vec<&LinkHypothesis> = hypotheses.iter().filter(|h| h.asserted()).collect();
    let correct = asserted
        .iter()
        .filter(|h| truth.true_pairs.contains(&(h.deposit, h.withdrawal)))
        .count();

    let mut per_withdrawal: BTreeMap<TxId, u32> = BTreeMap::new();
    for h in hypotheses {
        per_withdrawal.insert(h.withdrawal, h.set_size);
    }
    let sizes: Vec<u32> = per_withdrawal.values().copied().collect();
    let (mean_set_size, median_set_size, mean_entropy_bits) = stats(&sizes);

    let precision_undefined = asserted.is_empty();
    let recall_undefined = truth.true_pairs.is_empty();
    Ok(AttackScore {
        precision: if precision_undefined { 0.0 } else { correct as f64 / asserted.len() as f64 },
        recall: if recall_undefined { 0.0 } else { correct as f64 / truth.true_pairs.len() as f64 },
        mean_set_size,
        median_set_size,
        mean_entropy_bits,
        undefined: precision_undefined || recall_undefined,
    })
}

/// The network-layer attack: group transactions by broadcasting address and
/// score against the true user-to-transaction map. Each transaction is
/// attributed to its first spreader only, so clusters stay disjoint. Cover
/// packets never reach the trace and are excluded from the recall
/// denominator by construction.
pub fn link_by_network(
    trace: &[BroadcastEvent],
    truth: &GroundTruth,
) -> (Vec<UserCluster>, AttackScore) {
    let mut first_origin: BTreeMap<TxId, NetAddr> = BTreeMap::new();
    for ev in trace {
        first_origin.entry(ev.view.tx_id).or_insert(ev.origin);
    }
    let mut grouped: BTreeMap<NetAddr, BTreeSet<TxId>> = BTreeMap::new();
    for (tx, origin) in &first_origin {
        grouped.entry(*origin).or_default().insert(*tx);
    }
    let clusters: Vec<UserCluster> = grouped
        .iter()
        .map(|(origin, txs)| UserCluster { origin: *origin, txs: txs.clone() })
        .collect();

    // True per-user transaction sets.
    let mut true_sets: BTreeMap<NetAddr, BTreeSet<TxId>> = BTreeMap::new();
    for (tx, user) in &truth.user_of_tx {
        true_sets.entry(*user).or_default().insert(*tx);
    }

    let mut recalls = Vec::new();
    for (user, txs) in &true_sets {
        let hit = grouped.get(user).map_or(0, |c| c.intersection(txs).count());
        recalls.push(hit as f64 / txs.len() as f64);
    }
    let recall = if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    };

    let attributed: usize = grouped.values().map(BTreeSet::len).sum();
    let correct: usize = grouped
        .iter()
        .map(|(origin, txs)| {
            true_sets.get(origin).map_or(0, |t| t.intersection(txs).count())
        })
        .sum();
    let precision = if attributed == 0 { 0.0 } else { correct as f64 / attributed as f64 };

    let sizes: Vec<u32> = clusters.iter().map(|c| c.txs.len() as u32).collect();
    let (mean_set_size, median_set_size, mean_entropy_bits) = stats(&sizes);
    let undefined = trace.is_empty() || true_sets.is_empty();
    (
        clusters,
        AttackScore { precision, recall, mean_set_size, median_set_size, mean_entropy_bits, undefined },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Address, PublicTxView};
    use crate::network::Ticks;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn deposit_view(id: u64, ts: u64, parts: &[u64]) -> PublicTxView {
        PublicTxView {
            tx_id: TxId(id),
            kind: TxKind::TZ,
            visible_endpoints: vec![Address::transparent(id)],
            visible_amount: Some(Amount::zat(parts.iter().sum())),
            visible_parts: parts.iter().map(|&p| Amount::zat(p)).collect(),
            timestamp: Ticks(ts),
        }
    }

    fn withdrawal_view(id: u64, ts: u64, v: u64) -> PublicTxView {
        PublicTxView {
            tx_id: TxId(id),
            kind: TxKind::ZT,
            visible_endpoints: vec![Address::transparent(id)],
            visible_amount: Some(Amount::zat(v)),
            visible_parts: Vec::new(),
            timestamp: Ticks(ts),
        }
    }

    #[test]
    fn unique_value_is_an_asserted_link() {
        let views = vec![deposit_view(1, 0, &[70]), withdrawal_view(2, 10, 70)];
        let hyps = link_by_value(&views);
        assert_eq!(hyps, vec![LinkHypothesis { deposit: TxId(1), withdrawal: TxId(2), set_size: 1 }]);
    }

    #[test]
    fn two_matching_deposits_give_set_of_two() {
        let views = vec![
            deposit_view(1, 0, &[700]),
            deposit_view(2, 1, &[700]),
            withdrawal_view(3, 10, 700),
        ];
        let hyps = link_by_value(&views);
        assert_eq!(hyps.len(), 2);
        assert!(hyps.iter().all(|h| h.set_size == 2 && !h.asserted()));
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(link_by_value(&[]).is_empty());
    }

    #[test]
    fn deposits_after_the_withdrawal_do_not_match() {
        let views = vec![withdrawal_view(1, 5, 70), deposit_view(2, 9, &[70])];
        assert!(link_by_value(&views).is_empty());
    }

    #[test]
    fn unique_match_consumes_the_deposit() {
        let views = vec![
            deposit_view(1, 0, &[70]),
            withdrawal_view(2, 5, 70),
            withdrawal_view(3, 9, 70),
        ];
        let hyps = link_by_value(&views);
        // The second withdrawal finds nothing: the only deposit was uniquely
        // consumed by the first.
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].withdrawal, TxId(2));
    }

    /// Independent oracle: quadratic re-scan with the same matching rule,
    /// no value index.
    fn oracle_link_by_value(views: &[PublicTxView]) -> BTreeSet<LinkHypothesis> {
        let mut ordered: Vec<&PublicTxView> = views.iter().collect();
        ordered.sort_by_key(|v| (v.timestamp, v.tx_id));
        let mut open: Vec<(TxId, Ticks, Amount, bool)> = Vec::new();
        let mut out = BTreeSet::new();
        for view in ordered {
            if view.kind == TxKind::TZ {
                for p in &view.visible_parts {
                    open.push((view.tx_id, view.timestamp, *p, false));
                }
            } else if view.kind == TxKind::ZT {
                let v = view.visible_amount.unwrap();
                let candidate_ix: Vec<usize> = (0..open.len())
                    .filter(|&i| open[i].2 == v && !open[i].3 && open[i].1 < view.timestamp)
                    .collect();
                let size = candidate_ix.len() as u32;
                for &i in &candidate_ix {
                    out.insert(LinkHypothesis {
                        deposit: open[i].0,
                        withdrawal: view.tx_id,
                        set_size: size,
                    });
                }
                if size == 1 {
                    open[candidate_ix[0]].3 = true;
                }
            }
        }
        out
    }

    #[test]
    fn randomized_ledger_matches_enumeration_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut views = Vec::new();
            let mut id = 0u64;
            for ts in 0..50u64 {
                id += 1;
                let v = rng.gen_range(1..=6u64) * 100;
                if rng.gen_bool(0.5) {
                    let second = if rng.gen_bool(0.3) { rng.gen_range(1..=6u64) * 100 } else { 0 };
                    let parts: Vec<u64> =
                        std::iter::once(v).chain((second > 0).then_some(second)).collect();
                    views.push(deposit_view(id, ts, &parts));
                } else {
                    views.push(withdrawal_view(id, ts, v));
                }
            }
            let got: BTreeSet<LinkHypothesis> = link_by_value(&views).into_iter().collect();
            assert_eq!(got, oracle_link_by_value(&views));
        }
    }

    #[test]
    fn decoy_deposit_never_shrinks_a_candidate_set() {
        // Entropy monotonicity: adding a same-valued decoy deposit never
        // decreases any withdrawal's candidate-set size.
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..30 {
            let mut views = Vec::new();
            for ts in 0..30u64 {
                let v = rng.gen_range(1..=4u64) * 100;
                if rng.gen_bool(0.5) {
                    views.push(deposit_view(ts + 1, ts, &[v]));
                } else {
                    views.push(withdrawal_view(ts + 1, ts, v));
                }
            }
            let sizes_of = |vs: &[PublicTxView]| -> BTreeMap<TxId, u32> {
                let mut m = BTreeMap::new();
                for h in oracle_link_by_value(vs) {
                    m.insert(h.withdrawal, h.set_size);
                }
                m
            };
            let before = sizes_of(&views);
            let decoy_value = rng.gen_range(1..=4u64) * 100;
            let mut with_decoy = views.clone();
            with_decoy.insert(0, deposit_view(900, 0, &[decoy_value]));
            let after = sizes_of(&with_decoy);
            for (w, s) in before {
                assert!(after.get(&w).copied().unwrap_or(0) >= s);
            }
        }
    }

    fn truth_for(pairs: &[(u64, u64)], n_tx: u64) -> GroundTruth {
        let mut truth = GroundTruth::default();
        for id in 1..=n_tx {
            truth.user_of_tx.insert(TxId(id), NetAddr(id));
        }
        for &(d, w) in pairs {
            truth.true_pairs.insert((TxId(d), TxId(w)));
        }
        truth
    }

    #[test]
    fn ten_unique_naive_users_score_perfectly() {
        let mut views = Vec::new();
        let mut pairs = Vec::new();
        for u in 0..10u64 {
            let v = (u + 1) * 1_000;
            views.push(deposit_view(2 * u + 1, u, &[v]));
            views.push(withdrawal_view(2 * u + 2, 100 + u, v));
            pairs.push((2 * u + 1, 2 * u + 2));
        }
        let hyps = link_by_value(&views);
        let s = score(&hyps, &truth_for(&pairs, 20)).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.mean_entropy_bits, 0.0);
        assert!(!s.undefined);
    }

    #[test]
    fn entropy_of_singleton_and_eightfold_sets() {
        let mut views = vec![withdrawal_view(100, 50, 500)];
        for i in 0..8u64 {
            views.insert(0, deposit_view(i + 1, i, &[500]));
        }
        let hyps = link_by_value(&views);
        let s = score(&hyps, &truth_for(&[], 100)).unwrap();
        assert_eq!(s.mean_set_size, 8.0);
        assert_eq!(s.mean_entropy_bits, 3.0);

        let views = vec![deposit_view(1, 0, &[500]), withdrawal_view(2, 5, 500)];
        let s = score(&link_by_value(&views), &truth_for(&[(1, 2)], 2)).unwrap();
        assert_eq!(s.mean_entropy_bits, 0.0);
    }

    #[test]
    fn unknown_tx_id_is_an_error() {
        let hyps = vec![LinkHypothesis { deposit: TxId(1), withdrawal: TxId(2), set_size: 1 }];
        let truth = GroundTruth::default();
        assert_eq!(score(&hyps, &truth), Err(ScoreError::UnknownTxId(TxId(1))));
    }

    fn event(time: u64, origin: u64, tx: u64) -> BroadcastEvent {
        BroadcastEvent {
            time: Ticks(time),
            origin: NetAddr(origin),
            view: withdrawal_view(tx, time, 100),
        }
    }

    #[test]
    fn direct_broadcasts_cluster_by_user() {
        let trace = vec![event(1, 7, 1), event(2, 7, 2), event(3, 7, 3)];
        let mut truth = GroundTruth::default();
        for id in 1..=3 {
            truth.user_of_tx.insert(TxId(id), NetAddr(7));
        }
        let (clusters, s) = link_by_network(&trace, &truth);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].txs.len(), 3);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.precision, 1.0);
    }

    #[test]
    fn mix_exit_origin_yields_zero_per_user_recall() {
        let mix = 999;
        let trace = vec![event(1, mix, 1), event(2, mix, 2)];
        let mut truth = GroundTruth::default();
        truth.user_of_tx.insert(TxId(1), NetAddr(7));
        truth.user_of_tx.insert(TxId(2), NetAddr(8));
        let (clusters, s) = link_by_network(&trace, &truth);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].origin, NetAddr(mix));
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.precision, 0.0);
    }

    #[test]
    fn empty_trace_is_flagged() {
        let (clusters, s) = link_by_network(&[], &GroundTruth::default());
        assert!(clusters.is_empty());
        assert_eq!(s.recall, 0.0);
        assert!(s.undefined);
    }

    #[test]
    fn redundant_broadcasts_keep_clusters_disjoint() {
        let trace = vec![event(1, 100, 1), event(2, 200, 1)];
        let mut truth = GroundTruth::default();
        truth.user_of_tx.insert(TxId(1), NetAddr(7));
        let (clusters, _) = link_by_network(&trace, &truth);
        let total: usize = clusters.iter().map(|c| c.txs.len()).sum();
        assert_eq!(total, 1);
    }
}
