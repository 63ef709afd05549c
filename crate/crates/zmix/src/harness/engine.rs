//! Scenario execution: workload -> routing (direct or mixnet) -> adversary
//! evaluation -> metrics.
//!
//! Everything runs inside one deterministic scheduler. The run stream and the
//! workload stream are separate seeded RNGs, so mixnet parameters never
//! perturb the workload values.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, MixnetConfig, ScenarioConfig};
use super::report::MetricsReport;
use super::workload::{self, UserPlan};
use crate::adversary::{self, GroundTruth, LinkHypothesis, UserCluster};
use crate::advisor::{
    self, AdviceRequest, AdviceResponse, DepositHistogram, DepositLinkRecord, GridPolicy,
    RunLinkView,
};
use crate::ledger::{Address, Amount, Ledger, PublicTxView, Transaction, TxId, TxKind};
use crate::mixnet::{
    self, Cascade, DelayPolicy, DropReason, LayeredPacket, MixAction, MixBehavior, MixNode,
};
use crate::network::{BroadcastEvent, NetAddr, P2pNetwork, Scheduler, Ticks};

const RUN_STREAM: u64 = 0x5a4d_4958_0002;
/// Base for mix network addresses, far above any user id.
const MIX_ADDR_BASE: u64 = 1_000_000;
/// Base for fresh (shielded and change) address ids.
const FRESH_ADDR_BASE: u64 = 1_000_000;
/// A withdrawal waiting for its deposit to land re-polls at this interval.
const RETRY_INTERVAL: u64 = 500;
const MAX_RETRIES: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopAction {
    Forward,
    Broadcast,
    DropMalicious,
    DropCover,
    DropIntegrity,
}

/// One line of the per-hop processing log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopRecord {
    pub time: Ticks,
    pub cascade: u32,
    pub hop: u32,
    pub from: NetAddr,
    pub mix: NetAddr,
    pub action: HopAction,
    pub wire_len: usize,
    /// Ground truth only; not observable on the wire.
    pub cover: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceEntry {
    pub time: Ticks,
    pub user: u32,
    pub request: AdviceRequest,
    pub response: AdviceResponse,
}

/// Everything a completed scenario run produces.
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub report: MetricsReport,
    pub ledger: Ledger,
    pub views: Vec<PublicTxView>,
    pub trace: Vec<BroadcastEvent>,
    pub truth: GroundTruth,
    pub hypotheses: Vec<LinkHypothesis>,
    pub clusters: Vec<UserCluster>,
    /// Network addresses each mix handled during the run, keyed by mix addr.
    pub mix_observed: BTreeMap<NetAddr, BTreeSet<NetAddr>>,
    /// Which users injected packets into each cascade (ground truth).
    pub cascade_users: BTreeMap<u32, BTreeSet<NetAddr>>,
    /// Mix addresses per cascade, in hop order.
    pub cascade_addrs: Vec<Vec<NetAddr>>,
    pub hop_log: Vec<HopRecord>,
    pub advice_log: Vec<AdviceEntry>,
    pub link_view: RunLinkView,
}

enum Ev {
    Deposit { user: u32, cycle: u32 },
    ZzHop { user: u32, cycle: u32, retries: u32 },
    Withdraw { user: u32, cycle: u32, part: u8, retries: u32 },
    Deliver { cascade: u32, hop: u32, from: NetAddr, packet: LayeredPacket },
    ExitBroadcast { origin: NetAddr, tx: Transaction },
    Cover { user: u32 },
}

struct CycleState {
    deposit_id: TxId,
    source_tx: TxId,
    holdings: Vec<(Address, Amount)>,
    advised: bool,
    fallback: bool,
    parts_with_prior: bool,
    withdrawal_ids: Vec<TxId>,
}

struct Engine {
    config: ScenarioConfig,
    plans: Vec<UserPlan>,
    net: P2pNetwork,
    sched: Scheduler<Ev>,
    rng: ChaCha12Rng,
    cascades: Vec<Cascade>,
    grid: GridPolicy,
    hist: DepositHistogram,
    states: BTreeMap<(u32, u32), CycleState>,
    truth: GroundTruth,
    submitted: BTreeMap<TxId, Ticks>,
    delivered: BTreeMap<TxId, Ticks>,
    mix_observed: BTreeMap<NetAddr, BTreeSet<NetAddr>>,
    cascade_users: BTreeMap<u32, BTreeSet<NetAddr>>,
    hop_log: Vec<HopRecord>,
    advice_log: Vec<AdviceEntry>,
    next_tx_id: u64,
    next_fresh_addr: u64,
    real_first_hop: u64,
    cover_first_hop: u64,
    cover_emitted: u64,
}

fn user_net_addr(user: u32) -> NetAddr {
    NetAddr(user as u64)
}

fn user_t_addr(user: u32) -> Address {
    Address::transparent(user as u64)
}

fn build_cascades(m: &MixnetConfig, rng: &mut ChaCha12Rng) -> Vec<Cascade> {
    let droppers: BTreeSet<(u32, u32)> = m.droppers.iter().map(|d| (d.cascade, d.hop)).collect();
    (0..m.cascades)
        .map(|ci| {
            let nodes = (0..m.length)
                .map(|hop| {
                    let behavior = if droppers.contains(&(ci, hop)) {
                        MixBehavior::Dropper
                    } else {
                        MixBehavior::Honest
                    };
                    MixNode::new(
                        NetAddr(MIX_ADDR_BASE + ci as u64 * 1_000 + hop as u64),
                        behavior,
                        DelayPolicy { mean_ticks: m.delay_mean_ticks },
                        rng,
                    )
                })
                .collect();
            Cascade::new(nodes)
        })
        .collect()
}

impl Engine {
    fn new(config: ScenarioConfig) -> Engine {
        let plans = workload::generate(&config);
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ RUN_STREAM);
        let mut ledger = Ledger::new();
        for user in 0..config.users {
            ledger.mint(user_t_addr(user), Amount::zat(config.initial_balance_zat));
        }
        let cascades = match &config.mixnet {
            Some(m) => build_cascades(m, &mut rng),
            None => Vec::new(),
        };
        let grid = GridPolicy { step: Amount::zat(config.grid_zatoshi), ..GridPolicy::default() };
        Engine {
            plans,
            net: P2pNetwork::new(ledger),
            sched: Scheduler::new(),
            rng,
            cascades,
            grid,
            hist: DepositHistogram::new(),
            states: BTreeMap::new(),
            truth: GroundTruth::default(),
            submitted: BTreeMap::new(),
            delivered: BTreeMap::new(),
            mix_observed: BTreeMap::new(),
            cascade_users: BTreeMap::new(),
            hop_log: Vec::new(),
            advice_log: Vec::new(),
            next_tx_id: 1,
            next_fresh_addr: FRESH_ADDR_BASE,
            real_first_hop: 0,
            cover_first_hop: 0,
            cover_emitted: 0,
            config,
        }
    }

    fn fresh_shielded(&mut self) -> Address {
        let a = Address::shielded(self.next_fresh_addr);
        self.next_fresh_addr += 1;
        a
    }

    fn fresh_transparent(&mut self) -> Address {
        let a = Address::transparent(self.next_fresh_addr);
        self.next_fresh_addr += 1;
        a
    }

    fn next_id(&mut self) -> TxId {
        let id = TxId(self.next_tx_id);
        self.next_tx_id += 1;
        id
    }

    fn schedule_initial_events(&mut self) {
        for up in self.plans.clone() {
            for (ci, cycle) in up.cycles.iter().enumerate() {
                let cycle_ix = ci as u32;
                self.sched
                    .schedule(Ev::Deposit { user: up.user, cycle: cycle_ix }, cycle.deposit_at)
                    .expect("plan times are non-negative");
                if let Some(zz_at) = cycle.zz_at {
                    self.sched
                        .schedule(Ev::ZzHop { user: up.user, cycle: cycle_ix, retries: 0 }, zz_at)
                        .expect("plan times are non-negative");
                }
                for part in 0..2u8 {
                    self.sched
                        .schedule(
                            Ev::Withdraw { user: up.user, cycle: cycle_ix, part, retries: 0 },
                            cycle.withdraw_at[part as usize],
                        )
                        .expect("plan times are non-negative");
                }
            }
        }
        if let Some(m) = self.config.mixnet.clone() {
            if m.cover_rate_per_tick > 0.0 {
                let duration = Ticks(self.config.duration_ticks);
                for user in 0..self.config.users {
                    let arrivals =
                        mixnet::poisson_arrivals(m.cover_rate_per_tick, duration, &mut self.rng);
                    for at in arrivals {
                        self.sched.schedule(Ev::Cover { user }, at).expect("within duration");
                    }
                }
            }
        }
    }

    fn post_apply(&mut self, tx: &Transaction) {
        if tx.kind == TxKind::TZ {
            for (_, amount) in &tx.outputs {
                self.hist.record(*amount);
            }
        }
    }

    /// Route a freshly built transaction: directly into the P2P cloud, or
    /// wrapped for `k` cascades.
    fn submit(&mut self, user: u32, tx: Transaction) {
        let now = self.sched.now();
        self.submitted.insert(tx.id, now);
        self.truth.user_of_tx.insert(tx.id, user_net_addr(user));
        match self.config.mixnet.clone() {
            Some(m) => {
                let packets =
                    mixnet::send_redundant(&tx, &self.cascades, m.redundancy as usize, &mut self.rng)
                        .expect("redundancy validated against cascade count");
                for (ci, packet) in packets {
                    self.cascade_users
                        .entry(ci as u32)
                        .or_default()
                        .insert(user_net_addr(user));
                    self.real_first_hop += 1;
                    self.sched
                        .schedule(
                            Ev::Deliver {
                                cascade: ci as u32,
                                hop: 0,
                                from: user_net_addr(user),
                                packet,
                            },
                            now,
                        )
                        .expect("now is never in the past");
                }
            }
            None => {
                let outcome = self
                    .net
                    .direct_broadcast(user_net_addr(user), &tx, now)
                    .expect("engine only submits valid transactions");
                debug_assert!(outcome.applied);
                self.delivered.insert(tx.id, now);
                self.post_apply(&tx);
            }
        }
    }

    fn on_deposit(&mut self, user: u32, cycle: u32) {
        let plan = self.plans[user as usize].cycles[cycle as usize].clone();
        let advised = self.plans[user as usize].advised;
        let now = self.sched.now();

        let (parts, fallback, parts_with_prior) = if advised {
            match advisor::recommend_split(plan.value, &self.hist, &self.grid) {
                Ok(rec) => {
                    self.advice_log.push(AdviceEntry {
                        time: now,
                        user,
                        request: AdviceRequest { amount: plan.value },
                        response: AdviceResponse { recommendation: rec },
                    });
                    ([rec.parts.0, rec.parts.1], rec.fallback, !rec.fallback)
                }
                Err(_) => ([plan.value, Amount::ZERO], false, false),
            }
        } else {
            ([plan.value, Amount::ZERO], false, false)
        };

        let za = self.fresh_shielded();
        let zb = self.fresh_shielded();
        let id = self.next_id();
        let tx = Transaction {
            id,
            kind: TxKind::TZ,
            inputs: vec![(user_t_addr(user), plan.value)],
            outputs: vec![(za, parts[0]), (zb, parts[1])],
            timestamp: now,
        };
        if parts[1].is_zero() {
            self.truth.naive_deposits.insert(id);
        }
        let holdings = tx
            .outputs
            .iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(a, v)| (*a, *v))
            .collect();
        self.states.insert(
            (user, cycle),
            CycleState {
                deposit_id: id,
                source_tx: id,
                holdings,
                advised,
                fallback,
                parts_with_prior,
                withdrawal_ids: Vec::new(),
            },
        );
        self.submit(user, tx);
    }

    fn retry(&mut self, ev: Ev, retries: u32) {
        if retries >= MAX_RETRIES {
            // The source transaction never landed (dropped in the mixnet);
            // the dependent transaction is abandoned.
            return;
        }
        let at = self.sched.now() + RETRY_INTERVAL;
        self.sched.schedule(ev, at).expect("future tick");
    }

    fn on_zz_hop(&mut self, user: u32, cycle: u32, retries: u32) {
        let ready = self
            .states
            .get(&(user, cycle))
            .map(|s| self.net.ledger.contains(s.source_tx))
            .unwrap_or(false);
        if !ready {
            self.retry(Ev::ZzHop { user, cycle, retries: retries + 1 }, retries);
            return;
        }
        let holdings = self.states[&(user, cycle)].holdings.clone();
        let new_holdings: Vec<(Address, Amount)> =
            holdings.iter().map(|(_, v)| (Address::shielded(0), *v)).collect();
        let new_holdings: Vec<(Address, Amount)> = new_holdings
            .into_iter()
            .map(|(_, v)| (self.fresh_shielded(), v))
            .collect();
        let id = self.next_id();
        let tx = Transaction {
            id,
            kind: TxKind::ZZ,
            inputs: holdings,
            outputs: new_holdings.clone(),
            timestamp: self.sched.now(),
        };
        let state = self.states.get_mut(&(user, cycle)).expect("checked above");
        state.holdings = new_holdings;
        state.source_tx = id;
        self.submit(user, tx);
    }

    fn on_withdraw(&mut self, user: u32, cycle: u32, part: u8, retries: u32) {
        let Some(state) = self.states.get(&(user, cycle)) else {
            self.retry(Ev::Withdraw { user, cycle, part, retries: retries + 1 }, retries);
            return;
        };
        if part as usize >= state.holdings.len() {
            // Naive cycles only use the first withdrawal slot.
            return;
        }
        if !self.net.ledger.contains(state.source_tx) {
            self.retry(Ev::Withdraw { user, cycle, part, retries: retries + 1 }, retries);
            return;
        }
        let (z_addr, amount) = state.holdings[part as usize];
        let deposit_id = state.deposit_id;
        let dest = self.fresh_transparent();
        let id = self.next_id();
        let tx = Transaction {
            id,
            kind: TxKind::ZT,
            inputs: vec![(z_addr, amount)],
            outputs: vec![(dest, amount)],
            timestamp: self.sched.now(),
        };
        self.truth.true_pairs.insert((deposit_id, id));
        self.states
            .get_mut(&(user, cycle))
            .expect("checked above")
            .withdrawal_ids
            .push(id);
        self.submit(user, tx);
    }

    fn on_deliver(&mut self, cascade: u32, hop: u32, from: NetAddr, packet: LayeredPacket) {
        let now = self.sched.now();
        let mix_addr = self.cascades[cascade as usize].nodes[hop as usize].addr;
        self.mix_observed.entry(mix_addr).or_default().insert(from);
        let wire_len = packet.wire_len();
        let cover = packet.cover;
        let record = |action: HopAction, log: &mut Vec<HopRecord>| {
            log.push(HopRecord {
                time: now,
                cascade,
                hop,
                from,
                mix: mix_addr,
                action,
                wire_len,
                cover,
            });
        };
        let mix = &self.cascades[cascade as usize].nodes[hop as usize];
        match mixnet::process(mix, &packet, now, &mut self.rng) {
            Ok(MixAction::Forward { next, packet, at }) => {
                record(HopAction::Forward, &mut self.hop_log);
                self.mix_observed.entry(mix_addr).or_default().insert(next);
                self.sched
                    .schedule(Ev::Deliver { cascade, hop: hop + 1, from: mix_addr, packet }, at)
                    .expect("delay is non-negative");
            }
            Ok(MixAction::Broadcast { tx, at }) => {
                record(HopAction::Broadcast, &mut self.hop_log);
                self.sched
                    .schedule(Ev::ExitBroadcast { origin: mix_addr, tx }, at)
                    .expect("delay is non-negative");
            }
            Ok(MixAction::Drop { reason: DropReason::Malicious }) => {
                record(HopAction::DropMalicious, &mut self.hop_log);
            }
            Ok(MixAction::Drop { reason: DropReason::CoverExit }) => {
                record(HopAction::DropCover, &mut self.hop_log);
            }
            Err(_) => {
                record(HopAction::DropIntegrity, &mut self.hop_log);
            }
        }
    }

    fn on_exit_broadcast(&mut self, origin: NetAddr, tx: Transaction) {
        let now = self.sched.now();
        let outcome = self
            .net
            .broadcast(origin, &tx, now)
            .expect("mixnet carries only valid transactions");
        if outcome.applied {
            self.delivered.entry(tx.id).or_insert(now);
            self.post_apply(&tx);
        }
    }

    fn on_cover(&mut self, user: u32) {
        let ci = self.rng.gen_range(0..self.cascades.len());
        let packet = mixnet::wrap_cover(&self.cascades[ci], &mut self.rng)
            .expect("configured cascades are non-empty");
        self.cover_emitted += 1;
        self.cover_first_hop += 1;
        self.cascade_users.entry(ci as u32).or_default().insert(user_net_addr(user));
        let now = self.sched.now();
        self.sched
            .schedule(
                Ev::Deliver { cascade: ci as u32, hop: 0, from: user_net_addr(user), packet },
                now,
            )
            .expect("now is never in the past");
    }

    fn run(mut self) -> RunOutput {
        self.schedule_initial_events();
        while let Some((_, ev)) = self.sched.pop() {
            match ev {
                Ev::Deposit { user, cycle } => self.on_deposit(user, cycle),
                Ev::ZzHop { user, cycle, retries } => self.on_zz_hop(user, cycle, retries),
                Ev::Withdraw { user, cycle, part, retries } => {
                    self.on_withdraw(user, cycle, part, retries)
                }
                Ev::Deliver { cascade, hop, from, packet } => {
                    self.on_deliver(cascade, hop, from, packet)
                }
                Ev::ExitBroadcast { origin, tx } => self.on_exit_broadcast(origin, tx),
                Ev::Cover { user } => self.on_cover(user),
            }
        }
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        let (ledger, trace) = self.net.into_parts();
        assert!(ledger.conservation_holds());

        // A pair is only "true" if both ends made it onto the ledger.
        self.truth
            .true_pairs
            .retain(|(d, w)| ledger.contains(*d) && ledger.contains(*w));

        let views = ledger.public_views();
        let hypotheses = adversary::link_by_value(&views);
        let value_attack =
            adversary::score(&hypotheses, &self.truth).expect("ground truth covers the ledger");
        let (clusters, network_attack) = adversary::link_by_network(&trace, &self.truth);

        let delivery_rate = if self.submitted.is_empty() {
            1.0
        } else {
            self.delivered.len() as f64 / self.submitted.len() as f64
        };
        let mut latencies: Vec<u64> = self
            .delivered
            .iter()
            .map(|(id, at)| at.saturating_sub(self.submitted[id]).0)
            .collect();
        latencies.sort_unstable();
        let mean_added_latency = if latencies.is_empty() {
            0.0
        } else {
            latencies.iter().sum::<u64>() as f64 / latencies.len() as f64
        };
        let p95_added_latency = if latencies.is_empty() {
            0.0
        } else {
            latencies[((latencies.len() as f64 * 0.95).ceil() as usize).min(latencies.len()) - 1]
                as f64
        };
        let first_hop_total = self.real_first_hop + self.cover_first_hop;
        let attacker_advantage = if first_hop_total == 0 {
            1.0
        } else {
            self.real_first_hop as f64 / first_hop_total as f64
        };

        // Per-withdrawal candidate-set sizes for advice evaluation.
        let mut size_of: BTreeMap<TxId, u32> = BTreeMap::new();
        for h in &hypotheses {
            size_of.insert(h.withdrawal, h.set_size);
        }
        let deposits = self
            .states
            .iter()
            .map(|((user, cycle), s)| DepositLinkRecord {
                user: *user as u64,
                cycle: *cycle,
                total: self.plans[*user as usize].cycles[*cycle as usize].value,
                advised: s.advised,
                fallback: s.fallback,
                parts_with_prior: s.parts_with_prior,
                withdrawal_set_sizes: s
                    .withdrawal_ids
                    .iter()
                    .map(|w| size_of.get(w).copied().unwrap_or(0))
                    .collect(),
            })
            .collect();
        let link_view = RunLinkView { seed: self.config.seed, deposits };

        let report = MetricsReport {
            scenario_id: self.config.scenario_id.clone(),
            seed: self.config.seed,
            value_attack,
            network_attack,
            delivery_rate,
            mean_added_latency,
            p95_added_latency,
            cover_packets: self.cover_emitted,
            attacker_advantage,
        };

        RunOutput {
            cascade_addrs: self
                .cascades
                .iter()
                .map(|c| c.nodes.iter().map(|n| n.addr).collect())
                .collect(),
            config: self.config,
            report,
            ledger,
            views,
            trace,
            truth: self.truth,
            hypotheses,
            clusters,
            mix_observed: self.mix_observed,
            cascade_users: self.cascade_users,
            hop_log: self.hop_log,
            advice_log: self.advice_log,
            link_view,
        }
    }
}

/// Run one scenario end to end.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    Ok(Engine::new(config.clone()).run())
}
