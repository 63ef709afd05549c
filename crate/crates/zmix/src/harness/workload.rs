//! Deterministic workload generation.
//!
//! Every user runs deposit/withdraw cycles: deposit times land in the first
//! half of the run, withdrawals in the second half, so a deposit is always
//! on-chain before anyone tries to spend it. Values are drawn before
//! behavior is assigned, so the same seed yields the same workload values
//! whether users are naive or advised.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use super::config::{ScenarioConfig, ValueDist};
use crate::ledger::Amount;
use crate::network::Ticks;

/// RNG stream separation: the workload stream must not overlap the run
/// stream, or changing mixnet parameters would perturb the workload.
const WORKLOAD_STREAM: u64 = 0x5a4d_4958_0001;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclePlan {
    pub value: Amount,
    pub deposit_at: Ticks,
    /// Two slots: naive users consume only the first, advised users withdraw
    /// each part separately.
    pub withdraw_at: [Ticks; 2],
    pub zz_at: Option<Ticks>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPlan {
    pub user: u32,
    pub advised: bool,
    pub cycles: Vec<CyclePlan>,
}

fn quantize(v: u64, grid: u64) -> u64 {
    let snapped = (v + grid / 2) / grid * grid;
    snapped.max(grid)
}

pub fn generate(config: &ScenarioConfig) -> Vec<UserPlan> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ WORKLOAD_STREAM);
    let half = config.duration_ticks / 2;
    let advised_users = (config.advised_fraction * config.users as f64).round() as u32;
    let mut unique_counter = 0u64;

    (0..config.users)
        .map(|user| {
            let cycles = (0..config.deposits_per_user)
                .map(|_| {
                    let raw = match &config.value_dist {
                        ValueDist::LogUniform { min_zat, max_zat } => {
                            let ln = rng.gen_range((*min_zat as f64).ln()..=(*max_zat as f64).ln());
                            quantize(ln.exp().round() as u64, config.grid_zatoshi)
                                .min(*max_zat)
                                .max(*min_zat)
                        }
                        ValueDist::UniqueGrid { start_zat, step_zat } => {
                            let v = start_zat + unique_counter * step_zat;
                            unique_counter += 1;
                            v
                        }
                        ValueDist::Denominations { values_zat } => {
                            *values_zat.choose(&mut rng).expect("validated non-empty")
                        }
                    };
                    let deposit_at = Ticks(rng.gen_range(0..half));
                    let w0 = rng.gen_range(half..config.duration_ticks);
                    let w1 = w0 + 1 + rng.gen_range(0..50);
                    let zz_at = if rng.gen_bool(config.zz_hop_prob) {
                        // Between the deposit window and the withdrawal window.
                        Some(Ticks(rng.gen_range(half / 2..half) + half / 2))
                    } else {
                        None
                    };
                    CyclePlan {
                        value: Amount::zat(raw),
                        deposit_at,
                        withdraw_at: [Ticks(w0), Ticks(w1)],
                        zz_at,
                    }
                })
                .collect();
            UserPlan { user, advised: user < advised_users, cycles }
        })
        .collect()
}
