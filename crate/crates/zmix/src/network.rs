//! Deterministic discrete-event scheduling and the flat P2P broadcast cloud.
//!
//! The scheduler is a plain priority queue keyed by `(time, sequence)`, so
//! events that share a timestamp fire in insertion order and identical seeds
//! reproduce identical traces. The P2P layer is a single cloud: every
//! broadcast is immediately visible to the global passive adversary, which
//! records the full trace of `BroadcastEvent`s.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Amount, Ledger, LedgerError, PublicTxView, Transaction, TxId, TxKind};

/// Simulation time. One tick is nominally one millisecond.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Ticks(pub u64);

impl Ticks {
    pub const ZERO: Ticks = Ticks(0);

    pub fn saturating_sub(self, other: Ticks) -> Ticks {
        Ticks(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for Ticks {
    type Output = Ticks;
    fn add(self, rhs: Ticks) -> Ticks {
        Ticks(self.0 + rhs.0)
    }
}

impl std::ops::Add<u64> for Ticks {
    type Output = Ticks;
    fn add(self, rhs: u64) -> Ticks {
        Ticks(self.0 + rhs)
    }
}

impl std::fmt::Display for Ticks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An opaque network-layer identifier: one per user machine, one per mix.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NetAddr(pub u64);

/// One observation in the adversary's trace: who injected which transaction
/// into the P2P network, and when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastEvent {
    pub time: Ticks,
    pub origin: NetAddr,
    pub view: PublicTxView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("cannot schedule at {at} when current time is {now}")]
    SchedulingInPast { at: Ticks, now: Ticks },
}

struct Entry<E> {
    at: Ticks,
    seq: u64,
    ev: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops
        // first.
        (self.at, self.seq).cmp(&(other.at, other.seq)).reverse()
    }
}

/// Deterministic event queue. FIFO among equal timestamps.
pub struct Scheduler<E> {
    now: Ticks,
    seq: u64,
    heap: BinaryHeap<Entry<E>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler { now: Ticks::ZERO, seq: 0, heap: BinaryHeap::new() }
    }

    pub fn now(&self) -> Ticks {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn schedule(&mut self, ev: E, at: Ticks) -> Result<(), SchedulerError> {
        if at < self.now {
            return Err(SchedulerError::SchedulingInPast { at, now: self.now });
        }
        self.heap.push(Entry { at, seq: self.seq, ev });
        self.seq += 1;
        Ok(())
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(Ticks, E)> {
        let entry = self.heap.pop()?;
        debug_assert!(entry.at >= self.now);
        self.now = entry.at;
        Some((entry.at, entry.ev))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BroadcastOutcome {
    /// False when the transaction id was already on the ledger (redundant
    /// copies from multiple cascades are idempotent by tx id).
    pub applied: bool,
}

/// The P2P cloud: applies broadcast transactions to the ledger and records
/// the adversary-visible trace.
#[derive(Debug, Default)]
pub struct P2pNetwork {
    pub ledger: Ledger,
    trace: Vec<BroadcastEvent>,
}

impl P2pNetwork {
    pub fn new(ledger: Ledger) -> Self {
        P2pNetwork { ledger, trace: Vec::new() }
    }

    /// A user injects a transaction from their own network address.
    pub fn direct_broadcast(
        &mut self,
        user: NetAddr,
        tx: &Transaction,
        at: Ticks,
    ) -> Result<BroadcastOutcome, LedgerError> {
        self.broadcast(user, tx, at)
    }

    /// Inject a transaction from any origin (user or mix exit). Duplicate tx
    /// ids still produce a trace event but are not re-applied.
    pub fn broadcast(
        &mut self,
        origin: NetAddr,
        tx: &Transaction,
        at: Ticks,
    ) -> Result<BroadcastOutcome, LedgerError> {
        let applied = if self.ledger.contains(tx.id) {
            false
        } else {
            let mut stamped = tx.clone();
            stamped.timestamp = at;
            self.ledger.apply(stamped)?;
            true
        };
        let mut view_tx = tx.clone();
        view_tx.timestamp = at;
        debug_assert!(self.trace.last().is_none_or(|e| e.time <= at));
        self.trace.push(BroadcastEvent { time: at, origin, view: PublicTxView::of(&view_tx) });
        Ok(BroadcastOutcome { applied })
    }

    pub fn trace(&self) -> &[BroadcastEvent] {
        &self.trace
    }

    pub fn into_parts(self) -> (Ledger, Vec<BroadcastEvent>) {
        (self.ledger, self.trace)
    }
}

#[derive(Serialize)]
struct TraceLine {
    time: Ticks,
    origin: NetAddr,
    tx_id: TxId,
    kind: TxKind,
    visible_amount: Option<Amount>,
}

/// Line-delimited JSON export of the trace with the flattened observation
/// fields (time, origin, tx_id, kind, visible_amount).
pub fn write_trace_jsonl<W: Write>(trace: &[BroadcastEvent], mut w: W) -> std::io::Result<()> {
    for ev in trace {
        let line = TraceLine {
            time: ev.time,
            origin: ev.origin,
            tx_id: ev.view.tx_id,
            kind: ev.view.kind,
            visible_amount: ev.view.visible_amount,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}
