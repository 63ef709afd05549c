//! Addresses, the four transaction kinds, the shielded pool, and the
//! observer-visible projection of each transaction.
//!
//! The pool is modeled as a single value-conserving balance: deposits (TZ)
//! add to it, withdrawals (ZT) subtract from it, and private transfers (ZZ)
//! move value around inside it without changing the total. Amounts are exact
//! integer zatoshi so that value-matching analysis is exact.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Ticks;

/// 1 ZEC in zatoshi.
pub const COIN: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AddrKind {
    Transparent,
    Shielded,
}

/// An account identifier. Ids are unique within a simulation and the kind of
/// an address never changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address {
    pub kind: AddrKind,
    pub id: u64,
}

impl Address {
    pub fn transparent(id: u64) -> Self {
        Address { kind: AddrKind::Transparent, id }
    }

    pub fn shielded(id: u64) -> Self {
        Address { kind: AddrKind::Shielded, id }
    }

    pub fn is_transparent(&self) -> bool {
        self.kind == AddrKind::Transparent
    }

    pub fn is_shielded(&self) -> bool {
        self.kind == AddrKind::Shielded
    }
}

/// A non-negative amount in zatoshi. All arithmetic is exact.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn zat(v: u64) -> Self {
        Amount(v)
    }

    pub fn zec(v: u64) -> Self {
        Amount(v * COIN)
    }

    pub fn as_zat(&self) -> u64 {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    /// Exact sum, or `None` on overflow.
    pub fn sum<'a, I: IntoIterator<Item = &'a Amount>>(amounts: I) -> Option<Amount> {
        amounts
            .into_iter()
            .try_fold(Amount::ZERO, |acc, a| acc.checked_add(*a))
    }
}

impl std::fmt::Display for Amount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} zat", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u64);

/// The four transaction kinds: transparent, shielded (deposit), deshielded
/// (withdrawal) and private.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    TT,
    TZ,
    ZT,
    ZZ,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub kind: TxKind,
    pub inputs: Vec<(Address, Amount)>,
    pub outputs: Vec<(Address, Amount)>,
    pub timestamp: Ticks,
}

impl Transaction {
    pub fn input_total(&self) -> Option<Amount> {
        Amount::sum(self.inputs.iter().map(|(_, a)| a))
    }

    pub fn output_total(&self) -> Option<Amount> {
        Amount::sum(self.outputs.iter().map(|(_, a)| a))
    }
}

/// Exactly what a blockchain observer sees of a transaction.
///
/// TT exposes everything. TZ exposes the transparent sender(s), the total
/// deposited and the nonzero per-output values. ZT exposes the transparent
/// recipient(s) and the withdrawn amount. ZZ exposes only existence and time.
/// No shielded address identifier ever appears in a view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTxView {
    pub tx_id: TxId,
    pub kind: TxKind,
    pub visible_endpoints: Vec<Address>,
    pub visible_amount: Option<Amount>,
    /// Nonzero shielded-output values of a TZ deposit, in output order.
    /// Empty for every other kind.
    pub visible_parts: Vec<Amount>,
    pub timestamp: Ticks,
}

impl PublicTxView {
    pub fn of(tx: &Transaction) -> PublicTxView {
        let (endpoints, amount, parts) = match tx.kind {
            TxKind::TT => {
                let eps = tx
                    .inputs
                    .iter()
                    .chain(tx.outputs.iter())
                    .map(|(a, _)| *a)
                    .collect();
                (eps, tx.output_total(), Vec::new())
            }
            TxKind::TZ => {
                let eps = tx.inputs.iter().map(|(a, _)| *a).collect();
                let parts = tx
                    .outputs
                    .iter()
                    .filter(|(_, v)| !v.is_zero())
                    .map(|(_, v)| *v)
                    .collect();
                (eps, tx.input_total(), parts)
            }
            TxKind::ZT => {
                let eps = tx.outputs.iter().map(|(a, _)| *a).collect();
                (eps, tx.output_total(), Vec::new())
            }
            TxKind::ZZ => (Vec::new(), None, Vec::new()),
        };
        debug_assert!(endpoints.iter().all(Address::is_transparent));
        PublicTxView {
            tx_id: tx.id,
            kind: tx.kind,
            visible_endpoints: endpoints,
            visible_amount: amount,
            visible_parts: parts,
            timestamp: tx.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("input {0:?} is not funded for {1}")]
    UnfundedInput(Address, Amount),
    #[error("transaction shape violation: {0}")]
    ShapeViolation(String),
    #[error("value conservation violation")]
    ConservationViolation,
    #[error("duplicate transaction id {0:?}")]
    DuplicateTxId(TxId),
}

/// The ordered transaction log plus derived balances.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    txs: Vec<Transaction>,
    pool_balance: Amount,
    transparent: BTreeMap<Address, Amount>,
    minted: Amount,
    ids: BTreeSet<TxId>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Credit a transparent address out of thin air. This is the only way
    /// value enters the system; the minted total anchors the conservation
    /// invariant.
    pub fn mint(&mut self, addr: Address, amount: Amount) {
        assert!(addr.is_transparent(), "can only mint to transparent addresses");
        let bal = self.transparent.entry(addr).or_insert(Amount::ZERO);
        *bal = bal.checked_add(amount).expect("mint overflow");
        self.minted = self.minted.checked_add(amount).expect("mint overflow");
    }

    pub fn pool_balance(&self) -> Amount {
        self.pool_balance
    }

    pub fn minted(&self) -> Amount {
        self.minted
    }

    pub fn balance(&self, addr: Address) -> Amount {
        self.transparent.get(&addr).copied().unwrap_or(Amount::ZERO)
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.ids.contains(&id)
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    fn check_shape(tx: &Transaction) -> Result<(), LedgerError> {
        let shape = |msg: &str| Err(LedgerError::ShapeViolation(msg.to_string()));
        if tx.inputs.is_empty() {
            return shape("no inputs");
        }
        if tx.outputs.is_empty() {
            return shape("no outputs");
        }
        match tx.kind {
            TxKind::TT => {
                if !tx.inputs.iter().all(|(a, _)| a.is_transparent())
                    || !tx.outputs.iter().all(|(a, _)| a.is_transparent())
                {
                    return shape("TT endpoints must all be transparent");
                }
            }
            TxKind::TZ => {
                if !tx.inputs.iter().all(|(a, _)| a.is_transparent()) {
                    return shape("TZ inputs must be transparent");
                }
                if tx.outputs.len() != 2 {
                    return shape("TZ must have exactly two shielded outputs");
                }
                if !tx.outputs.iter().all(|(a, _)| a.is_shielded()) {
                    return shape("TZ outputs must be shielded");
                }
                if tx.outputs[0].0 == tx.outputs[1].0 {
                    return shape("TZ outputs must be two distinct shielded addresses");
                }
            }
            TxKind::ZT => {
                if !tx.inputs.iter().all(|(a, _)| a.is_shielded()) {
                    return shape("ZT inputs must be shielded");
                }
                if !tx.outputs.iter().all(|(a, _)| a.is_transparent()) {
                    return shape("ZT outputs must be transparent");
                }
            }
            TxKind::ZZ => {
                if !tx.inputs.iter().all(|(a, _)| a.is_shielded())
                    || !tx.outputs.iter().all(|(a, _)| a.is_shielded())
                {
                    return shape("ZZ endpoints must all be shielded");
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, tx: &Transaction) -> Result<(), LedgerError> {
        if self.ids.contains(&tx.id) {
            return Err(LedgerError::DuplicateTxId(tx.id));
        }
        Self::check_shape(tx)?;
        let in_total = tx.input_total().ok_or(LedgerError::ConservationViolation)?;
        let out_total = tx.output_total().ok_or(LedgerError::ConservationViolation)?;
        if in_total != out_total {
            return Err(LedgerError::ConservationViolation);
        }
        match tx.kind {
            TxKind::TT | TxKind::TZ => {
                // Aggregate required value per transparent input address.
                let mut needed: BTreeMap<Address, Amount> = BTreeMap::new();
                for (addr, amt) in &tx.inputs {
                    let e = needed.entry(*addr).or_insert(Amount::ZERO);
                    *e = e.checked_add(*amt).ok_or(LedgerError::ConservationViolation)?;
                }
                for (addr, amt) in needed {
                    if self.balance(addr) < amt {
                        return Err(LedgerError::UnfundedInput(addr, amt));
                    }
                }
            }
            TxKind::ZT => {
                if self.pool_balance < in_total {
                    return Err(LedgerError::UnfundedInput(tx.inputs[0].0, in_total));
                }
            }
            TxKind::ZZ => {
                // Pool-internal transfer; per-note balances are tracked only
                // as simulator ground truth, not by the ledger.
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, tx: Transaction) -> Result<(), LedgerError> {
        self.validate(&tx)?;
        match tx.kind {
            TxKind::TT => {
                for (addr, amt) in &tx.inputs {
                    let bal = self.transparent.get_mut(addr).expect("validated");
                    *bal = bal.checked_sub(*amt).expect("validated");
                }
                for (addr, amt) in &tx.outputs {
                    let bal = self.transparent.entry(*addr).or_insert(Amount::ZERO);
                    *bal = bal.checked_add(*amt).expect("conservation checked");
                }
            }
            TxKind::TZ => {
                let total = tx.input_total().expect("validated");
                for (addr, amt) in &tx.inputs {
                    let bal = self.transparent.get_mut(addr).expect("validated");
                    *bal = bal.checked_sub(*amt).expect("validated");
                }
                self.pool_balance = self.pool_balance.checked_add(total).expect("validated");
            }
            TxKind::ZT => {
                let total = tx.output_total().expect("validated");
                self.pool_balance = self.pool_balance.checked_sub(total).expect("validated");
                for (addr, amt) in &tx.outputs {
                    let bal = self.transparent.entry(*addr).or_insert(Amount::ZERO);
                    *bal = bal.checked_add(*amt).expect("conservation checked");
                }
            }
            TxKind::ZZ => {}
        }
        self.ids.insert(tx.id);
        self.txs.push(tx);
        debug_assert!(self.conservation_holds());
        Ok(())
    }

    /// minted = pool + all transparent balances, exactly.
    pub fn conservation_holds(&self) -> bool {
        let transparent_total = Amount::sum(self.transparent.values());
        match transparent_total.and_then(|t| t.checked_add(self.pool_balance)) {
            Some(total) => total == self.minted,
            None => false,
        }
    }

    pub fn public_views(&self) -> Vec<PublicTxView> {
        self.txs.iter().map(PublicTxView::of).collect()
    }

    /// One JSON-encoded `PublicTxView` per line.
    pub fn write_views_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for tx in &self.txs {
            serde_json::to_writer(&mut w, &PublicTxView::of(tx))?;
            writeln!(w)?;
        }
        Ok(())
    }
}
