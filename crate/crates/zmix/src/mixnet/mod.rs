//! Cascade mix network: layered packet sealing, per-hop exponential delays,
//! cover traffic, exit broadcasting and multi-cascade redundancy.
//!
//! A cascade is a fixed ordered chain of mixes; the last node is the exit.
//! Each honest mix removes one layer, delays, and either forwards to the next
//! mix or broadcasts the recovered transaction from its own network address.
//! A dropper discards everything it receives (it cannot tell cover from real
//! packets). Mixes can only forward or drop; there is no operation here that
//! constructs or alters a `Transaction`.

pub mod seal;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ledger::Transaction;
use crate::network::{NetAddr, Ticks};
use seal::{SealError, SealKey};

/// Constant size of every packet on the simulated wire. Packets are padded
/// to this length so size cannot distinguish layer depth or cover traffic.
pub const PACKET_WIRE_LEN: usize = 2048;

/// Random filler length carried by loop cover packets, sized like a typical
/// serialized transaction.
const COVER_PAD_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixBehavior {
    Honest,
    /// Denial of service: never transmits what it receives.
    Dropper,
}

/// Per-hop delay policy: exponential with mean `mean_ticks`, floored at one
/// tick (stop-and-go style continuous-time mixing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayPolicy {
    pub mean_ticks: f64,
}

pub fn sample_delay<R: Rng>(policy: DelayPolicy, rng: &mut R) -> Ticks {
    assert!(policy.mean_ticks > 0.0, "delay mean must be positive");
    let exp = Exp::new(1.0 / policy.mean_ticks).expect("positive rate");
    let d: f64 = exp.sample(rng);
    Ticks((d.round() as u64).max(1))
}

#[derive(Debug, Clone)]
pub struct MixNode {
    pub addr: NetAddr,
    pub key: SealKey,
    pub behavior: MixBehavior,
    pub delay: DelayPolicy,
}

impl MixNode {
    pub fn new<R: Rng>(addr: NetAddr, behavior: MixBehavior, delay: DelayPolicy, rng: &mut R) -> Self {
        MixNode { addr, key: SealKey::generate(rng), behavior, delay }
    }
}

/// Fixed ordered chain of mixes; the last node is the designated exit.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub nodes: Vec<MixNode>,
}

impl Cascade {
    pub fn new(nodes: Vec<MixNode>) -> Self {
        Cascade { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entry(&self) -> Option<&MixNode> {
        self.nodes.first()
    }

    pub fn exit(&self) -> Option<&MixNode> {
        self.nodes.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MixError {
    #[error("cascade has no mixes")]
    EmptyCascade,
    #[error("packet addressed to {addressed:?}, not this mix ({this:?})")]
    WrongHop { addressed: NetAddr, this: NetAddr },
    #[error("layer integrity failure: {0}")]
    IntegrityFailure(SealError),
    #[error("sealed layer is malformed")]
    Malformed,
    #[error("requested {requested} cascades but only {available} exist")]
    InsufficientCascades { requested: usize, available: usize },
    #[error("payload does not fit in the fixed packet size")]
    PacketTooLarge,
}

/// Onion-sealed routing envelope. `next_hop` is the cleartext current-hop
/// header; everything else is opaque until the addressed mix peels it.
#[derive(Debug, Clone)]
pub struct LayeredPacket {
    pub layers_remaining: u32,
    pub next_hop: NetAddr,
    sealed: Vec<u8>,
    /// Ground-truth-only marker, never observable on the wire.
    pub cover: bool,
}

impl LayeredPacket {
    /// Observable size on the simulated wire: constant by construction.
    pub fn wire_len(&self) -> usize {
        PACKET_WIRE_LEN
    }
}

/// What a mix finds under one layer.
enum LayerContent {
    Relay { next: NetAddr, layers_remaining: u32, sealed: Vec<u8> },
    ExitBroadcast(Transaction),
    ExitCover,
}

const CONTENT_RELAY: u8 = 1;
const CONTENT_EXIT_BROADCAST: u8 = 2;
const CONTENT_EXIT_COVER: u8 = 3;

impl LayerContent {
    fn encode<R: Rng>(&self, rng: &mut R) -> Result<Vec<u8>, MixError> {
        let mut out = Vec::new();
        match self {
            LayerContent::Relay { next, layers_remaining, sealed } => {
                out.push(CONTENT_RELAY);
                out.extend_from_slice(&next.0.to_le_bytes());
                out.extend_from_slice(&layers_remaining.to_le_bytes());
                out.extend_from_slice(&(sealed.len() as u32).to_le_bytes());
                out.extend_from_slice(sealed);
            }
            LayerContent::ExitBroadcast(tx) => {
                let body = serde_json::to_vec(tx).expect("transaction serializes");
                out.push(CONTENT_EXIT_BROADCAST);
                out.extend_from_slice(&(body.len() as u32).to_le_bytes());
                out.extend_from_slice(&body);
            }
            LayerContent::ExitCover => {
                let mut pad = vec![0u8; COVER_PAD_LEN];
                rng.fill_bytes(&mut pad);
                out.push(CONTENT_EXIT_COVER);
                out.extend_from_slice(&(pad.len() as u32).to_le_bytes());
                out.extend_from_slice(&pad);
            }
        }
        if out.len() + seal::NONCE_LEN + seal::TAG_LEN > PACKET_WIRE_LEN {
            return Err(MixError::PacketTooLarge);
        }
        Ok(out)
    }

    fn decode(bytes: &[u8]) -> Result<LayerContent, MixError> {
        let take = |b: &[u8], n: usize| -> Result<(), MixError> {
            if b.len() < n { Err(MixError::Malformed) } else { Ok(()) }
        };
        take(bytes, 1)?;
        match bytes[0] {
            CONTENT_RELAY => {
                take(bytes, 1 + 8 + 4 + 4)?;
                let next = NetAddr(u64::from_le_bytes(bytes[1..9].try_into().unwrap()));
                let layers = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
                let len = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
                take(bytes, 17 + len)?;
                Ok(LayerContent::Relay {
                    next,
                    layers_remaining: layers,
                    sealed: bytes[17..17 + len].to_vec(),
                })
            }
            CONTENT_EXIT_BROADCAST => {
                take(bytes, 1 + 4)?;
                let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
                take(bytes, 5 + len)?;
                let tx = serde_json::from_slice(&bytes[5..5 + len])
                    .map_err(|_| MixError::Malformed)?;
                Ok(LayerContent::ExitBroadcast(tx))
            }
            CONTENT_EXIT_COVER => Ok(LayerContent::ExitCover),
            _ => Err(MixError::Malformed),
        }
    }
}

fn wrap_payload<R: Rng>(
    payload: LayerContent,
    cascade: &Cascade,
    rng: &mut R,
    cover: bool,
) -> Result<LayeredPacket, MixError> {
    if cascade.is_empty() {
        return Err(MixError::EmptyCascade);
    }
    let depth = cascade.len();
    // Innermost layer first: the exit opens it.
    let mut sealed = {
        let bytes = payload.encode(rng)?;
        seal::seal(&cascade.nodes[depth - 1].key, rng, &bytes)
    };
    // Wrap outward. Mix i's layer reveals only mix i+1's address.
    for i in (0..depth - 1).rev() {
        let content = LayerContent::Relay {
            next: cascade.nodes[i + 1].addr,
            layers_remaining: (depth - 1 - i) as u32,
            sealed,
        };
        let bytes = content.encode(rng)?;
        sealed = seal::seal(&cascade.nodes[i].key, rng, &bytes);
    }
    Ok(LayeredPacket {
        layers_remaining: depth as u32,
        next_hop: cascade.nodes[0].addr,
        sealed,
        cover,
    })
}

/// Seal a transaction for the given cascade: one layer per mix, exit layer
/// carrying the serialized transaction and a broadcast instruction.
pub fn wrap<R: Rng>(
    tx: &Transaction,
    cascade: &Cascade,
    rng: &mut R,
) -> Result<LayeredPacket, MixError> {
    wrap_payload(LayerContent::ExitBroadcast(tx.clone()), cascade, rng, false)
}

/// Seal a loop cover packet: same wire shape as a real packet, dropped at
/// the exit.
pub fn wrap_cover<R: Rng>(cascade: &Cascade, rng: &mut R) -> Result<LayeredPacket, MixError> {
    wrap_payload(LayerContent::ExitCover, cascade, rng, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Dropper behavior: the mix discards everything.
    Malicious,
    /// Loop cover reached the exit and was discarded by design.
    CoverExit,
}

#[derive(Debug, Clone)]
pub enum MixAction {
    Forward { next: NetAddr, packet: LayeredPacket, at: Ticks },
    Broadcast { tx: Transaction, at: Ticks },
    Drop { reason: DropReason },
}

/// One hop of mix processing: peel a layer, sample a delay, emit the action.
pub fn process<R: Rng>(
    mix: &MixNode,
    packet: &LayeredPacket,
    now: Ticks,
    rng: &mut R,
) -> Result<MixAction, MixError> {
    if packet.next_hop != mix.addr {
        return Err(MixError::WrongHop { addressed: packet.next_hop, this: mix.addr });
    }
    if mix.behavior == MixBehavior::Dropper {
        // Cover is indistinguishable from real traffic, so a dropper drops
        // everything.
        return Ok(MixAction::Drop { reason: DropReason::Malicious });
    }
    let plaintext = seal::open(&mix.key, &packet.sealed).map_err(MixError::IntegrityFailure)?;
    let delay = sample_delay(mix.delay, rng);
    match LayerContent::decode(&plaintext)? {
        LayerContent::Relay { next, layers_remaining, sealed } => Ok(MixAction::Forward {
            next,
            packet: LayeredPacket { layers_remaining, next_hop: next, sealed, cover: packet.cover },
            at: now + delay,
        }),
        LayerContent::ExitBroadcast(tx) => Ok(MixAction::Broadcast { tx, at: now + delay }),
        LayerContent::ExitCover => Ok(MixAction::Drop { reason: DropReason::CoverExit }),
    }
}

/// Wrap `tx` independently for `k` distinct cascades. The ledger applies the
/// transaction once no matter how many exits broadcast it.
pub fn send_redundant<R: Rng>(
    tx: &Transaction,
    cascades: &[Cascade],
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, LayeredPacket)>, MixError> {
    if k == 0 || k > cascades.len() {
        return Err(MixError::InsufficientCascades { requested: k, available: cascades.len() });
    }
    let mut chosen = rand::seq::index::sample(rng, cascades.len(), k).into_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|ci| wrap(tx, &cascades[ci], rng).map(|p| (ci, p)))
        .collect()
}

/// Arrival times of a Poisson process with `rate_per_tick`, over `duration`.
pub fn poisson_arrivals<R: Rng>(rate_per_tick: f64, duration: Ticks, rng: &mut R) -> Vec<Ticks> {
    if rate_per_tick <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_per_tick).expect("positive rate");
    let mut arrivals = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += exp.sample(rng);
        if t >= duration.0 as f64 {
            break;
        }
        arrivals.push(Ticks(t.round() as u64));
    }
    arrivals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Address, Amount, TxId, TxKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sample_tx() -> Transaction {
        Transaction {
            id: TxId(42),
            kind: TxKind::TZ,
            inputs: vec![(Address::transparent(1), Amount::zec(3))],
            outputs: vec![
                (Address::shielded(10), Amount::zec(3)),
                (Address::shielded(11), Amount::ZERO),
            ],
            timestamp: Ticks(0),
        }
    }

    fn cascade(len: usize, rng: &mut ChaCha12Rng) -> Cascade {
        let nodes = (0..len)
            .map(|i| {
                MixNode::new(
                    NetAddr(1_000 + i as u64),
                    MixBehavior::Honest,
                    DelayPolicy { mean_ticks: 10.0 },
                    rng,
                )
            })
            .collect();
        Cascade::new(nodes)
    }

    /// Peel every layer in order, asserting the per-hop structure along the
    /// way, and return the recovered transaction.
    fn peel_all(c: &Cascade, mut packet: LayeredPacket, rng: &mut ChaCha12Rng) -> Transaction {
        let mut now = Ticks(0);
        for (i, mix) in c.nodes.iter().enumerate() {
            assert_eq!(packet.next_hop, mix.addr);
            assert_eq!(packet.layers_remaining as usize, c.len() - i);
            match process(mix, &packet, now, rng).unwrap() {
                MixAction::Forward { next, packet: inner, at } => {
                    assert!(i + 1 < c.len());
                    assert_eq!(next, c.nodes[i + 1].addr);
                    assert_eq!(inner.layers_remaining as usize, c.len() - i - 1);
                    now = at;
                    packet = inner;
                }
                MixAction::Broadcast { tx, .. } => {
                    assert_eq!(i, c.len() - 1);
                    return tx;
                }
                MixAction::Drop { .. } => panic!("honest cascade dropped a real packet"),
            }
        }
        unreachable!("exit layer must broadcast");
    }

    #[test]
    fn wrap_peel_round_trip_recovers_tx() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let c = cascade(3, &mut rng);
        let tx = sample_tx();
        let packet = wrap(&tx, &c, &mut rng).unwrap();
        assert_eq!(packet.layers_remaining, 3);
        let recovered = peel_all(&c, packet, &mut rng);
        assert_eq!(recovered, tx);
    }

    #[test]
    fn degenerate_single_mix_cascade_broadcasts_immediately() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let c = cascade(1, &mut rng);
        let tx = sample_tx();
        let packet = wrap(&tx, &c, &mut rng).unwrap();
        assert_eq!(packet.layers_remaining, 1);
        match process(&c.nodes[0], &packet, Ticks(0), &mut rng).unwrap() {
            MixAction::Broadcast { tx: out, at } => {
                assert_eq!(out, tx);
                assert!(at >= Ticks(1));
            }
            other => panic!("expected broadcast, got {other:?}"),
        }
    }

    #[test]
    fn empty_cascade_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let c = Cascade::new(Vec::new());
        assert_eq!(wrap(&sample_tx(), &c, &mut rng).unwrap_err(), MixError::EmptyCascade);
    }

    #[test]
    fn every_flipped_body_byte_fails_integrity() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let c = cascade(2, &mut rng);
        let packet = wrap(&sample_tx(), &c, &mut rng).unwrap();
        for i in 0..packet.sealed.len() {
            let mut tampered = packet.clone();
            tampered.sealed[i] ^= 0x80;
            let res = process(&c.nodes[0], &tampered, Ticks(0), &mut rng);
            assert!(
                matches!(res, Err(MixError::IntegrityFailure(_))),
                "byte {i} not detected"
            );
        }
    }

    #[test]
    fn wrong_hop_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let c = cascade(2, &mut rng);
        let packet = wrap(&sample_tx(), &c, &mut rng).unwrap();
        let res = process(&c.nodes[1], &packet, Ticks(0), &mut rng);
        assert!(matches!(res, Err(MixError::WrongHop { .. })));
    }

    #[test]
    fn dropper_drops_real_and_cover_alike() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut c = cascade(1, &mut rng);
        c.nodes[0].behavior = MixBehavior::Dropper;
        let real = wrap(&sample_tx(), &c, &mut rng).unwrap();
        let cover = wrap_cover(&c, &mut rng).unwrap();
        for p in [real, cover] {
            match process(&c.nodes[0], &p, Ticks(0), &mut rng).unwrap() {
                MixAction::Drop { reason: DropReason::Malicious } => {}
                other => panic!("expected malicious drop, got {other:?}"),
            }
        }
    }

    #[test]
    fn cover_is_dropped_at_exit_only() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let c = cascade(2, &mut rng);
        let packet = wrap_cover(&c, &mut rng).unwrap();
        let inner = match process(&c.nodes[0], &packet, Ticks(0), &mut rng).unwrap() {
            MixAction::Forward { packet, .. } => packet,
            other => panic!("expected forward, got {other:?}"),
        };
        match process(&c.nodes[1], &inner, Ticks(5), &mut rng).unwrap() {
            MixAction::Drop { reason: DropReason::CoverExit } => {}
            other => panic!("expected cover drop, got {other:?}"),
        }
    }

    #[test]
    fn cover_and_real_share_the_wire_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let c = cascade(3, &mut rng);
        let real = wrap(&sample_tx(), &c, &mut rng).unwrap();
        let cover = wrap_cover(&c, &mut rng).unwrap();
        assert_eq!(real.wire_len(), cover.wire_len());
        assert_eq!(real.next_hop, cover.next_hop);
        assert_eq!(real.layers_remaining, cover.layers_remaining);
    }

    #[test]
    fn delay_mean_matches_policy() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let policy = DelayPolicy { mean_ticks: 50.0 };
        let n = 100_000u64;
        let mut total = 0u64;
        for _ in 0..n {
            let d = sample_delay(policy, &mut rng);
            assert!(d >= Ticks(1));
            total += d.0;
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 50.0).abs() / 50.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn delay_draws_are_seed_deterministic() {
        let policy = DelayPolicy { mean_ticks: 50.0 };
        let draw = |seed: u64| -> Vec<Ticks> {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_delay(policy, &mut rng)).collect()
        };
        assert_eq!(draw(99), draw(99));
    }

    #[test]
    fn zero_rate_emits_no_cover() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        assert!(poisson_arrivals(0.0, Ticks(1_000_000), &mut rng).is_empty());
    }

    #[test]
    fn poisson_count_concentrates() {
        // lambda = 0.01 over 1e6 ticks: expect 1e4 within 3 sigma (300).
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let arrivals = poisson_arrivals(0.01, Ticks(1_000_000), &mut rng);
        let n = arrivals.len() as f64;
        assert!((n - 10_000.0).abs() < 300.0, "count {n}");
        assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn redundant_send_uses_distinct_cascades() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let cascades: Vec<Cascade> = (0..3).map(|_| cascade(3, &mut rng)).collect();
        let tx = sample_tx();
        let packets = send_redundant(&tx, &cascades, 2, &mut rng).unwrap();
        assert_eq!(packets.len(), 2);
        assert_ne!(packets[0].0, packets[1].0);
        for (ci, p) in packets {
            let recovered = peel_all(&cascades[ci], p, &mut rng);
            assert_eq!(recovered, tx);
        }
    }

    #[test]
    fn redundancy_beyond_available_cascades_fails() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let cascades: Vec<Cascade> = (0..2).map(|_| cascade(2, &mut rng)).collect();
        let res = send_redundant(&sample_tx(), &cascades, 3, &mut rng);
        assert_eq!(
            res.unwrap_err(),
            MixError::InsufficientCascades { requested: 3, available: 2 }
        );
    }

    #[test]
    fn end_to_end_delay_composes_linearly() {
        // Mean added delay over many packets through L hops is L * mu.
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let c = {
            let nodes = (0..3)
                .map(|i| {
                    MixNode::new(
                        NetAddr(2_000 + i as u64),
                        MixBehavior::Honest,
                        DelayPolicy { mean_ticks: 50.0 },
                        &mut rng,
                    )
                })
                .collect();
            Cascade::new(nodes)
        };
        let tx = sample_tx();
        let n = 10_000u64;
        let mut total = 0u64;
        for _ in 0..n {
            let mut packet = wrap(&tx, &c, &mut rng).unwrap();
            let mut now = Ticks(0);
            'hops: for mix in &c.nodes {
                match process(mix, &packet, now, &mut rng).unwrap() {
                    MixAction::Forward { packet: inner, at, .. } => {
                        now = at;
                        packet = inner;
                    }
                    MixAction::Broadcast { at, .. } => {
                        now = at;
                        break 'hops;
                    }
                    MixAction::Drop { .. } => unreachable!(),
                }
            }
            total += now.0;
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 150.0).abs() / 150.0 < 0.10, "mean {mean}");
    }
}
