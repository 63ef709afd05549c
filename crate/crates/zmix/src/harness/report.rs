//! Run reports, baseline/treatment deltas, and the cover-traffic sweep.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ScenarioConfig};
use super::engine::{self, RunOutput};
use crate::adversary::AttackScore;
use crate::advisor::{AdvisorError};

/// Headline metrics for one scenario run. Serialized as the `report.json`
/// artifact; byte-identical for identical (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub seed: u64,
    pub value_attack: AttackScore,
    pub network_attack: AttackScore,
    /// Applied transactions / submitted transactions.
    pub delivery_rate: f64,
    /// Ticks from submission to ledger application, delivered txs only.
    pub mean_added_latency: f64,
    pub p95_added_latency: f64,
    pub cover_packets: u64,
    /// Fraction of first-hop packets that carry a real transaction.
    pub attacker_advantage: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Metric deltas between two runs of the same workload (same seed), e.g.
/// naive baseline vs advised treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub baseline_id: String,
    pub treatment_id: String,
    pub seed: u64,
    pub value_precision_delta: f64,
    pub value_recall_delta: f64,
    pub mean_set_size_delta: f64,
    pub mean_entropy_bits_delta: f64,
    pub network_recall_delta: f64,
    pub delivery_rate_delta: f64,
    pub mean_added_latency_delta: f64,
}

/// Compare two reports of the same seeded workload. Refuses mismatched seeds,
/// since deltas between unrelated workloads are meaningless.
pub fn compare(baseline: &MetricsReport, treatment: &MetricsReport) -> Result<DeltaReport, AdvisorError> {
    if baseline.seed != treatment.seed {
        return Err(AdvisorError::MismatchedBaseline(format!(
            "seed mismatch: baseline {} vs treatment {}",
            baseline.seed, treatment.seed
        )));
    }
    Ok(DeltaReport {
        baseline_id: baseline.scenario_id.clone(),
        treatment_id: treatment.scenario_id.clone(),
        seed: baseline.seed,
        value_precision_delta: treatment.value_attack.precision - baseline.value_attack.precision,
        value_recall_delta: treatment.value_attack.recall - baseline.value_attack.recall,
        mean_set_size_delta: treatment.value_attack.mean_set_size
            - baseline.value_attack.mean_set_size,
        mean_entropy_bits_delta: treatment.value_attack.mean_entropy_bits
            - baseline.value_attack.mean_entropy_bits,
        network_recall_delta: treatment.network_attack.recall - baseline.network_attack.recall,
        delivery_rate_delta: treatment.delivery_rate - baseline.delivery_rate,
        mean_added_latency_delta: treatment.mean_added_latency - baseline.mean_added_latency,
    })
}

/// One row of the cover-traffic sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cover_rate_per_tick: f64,
    pub attacker_advantage: f64,
    pub cover_packets: u64,
    pub delivery_rate: f64,
    pub mean_added_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Whether attacker advantage was nonincreasing across the sweep.
    /// Reported for inspection; not a hard requirement.
    pub advantage_nonincreasing: bool,
}

/// Re-run the scenario across cover-traffic rates. The base config must have
/// a mixnet section; everything else is held fixed.
pub fn sweep_cover_rate(
    base: &ScenarioConfig,
    rates: &[f64],
) -> Result<SweepReport, ConfigError> {
    let Some(mixnet) = base.mixnet.clone() else {
        return Err(ConfigError::Invalid(vec![
            "mixnet: required for a cover-rate sweep".to_string(),
        ]));
    };
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut config = base.clone();
        let mut m = mixnet.clone();
        m.cover_rate_per_tick = rate;
        config.mixnet = Some(m);
        let out: RunOutput = engine::run_scenario(&config)?;
        rows.push(SweepRow {
            cover_rate_per_tick: rate,
            attacker_advantage: out.report.attacker_advantage,
            cover_packets: out.report.cover_packets,
            delivery_rate: out.report.delivery_rate,
            mean_added_latency: out.report.mean_added_latency,
        });
    }
    let advantage_nonincreasing = rows
        .windows(2)
        .all(|w| w[1].attacker_advantage <= w[0].attacker_advantage + 1e-12);
    Ok(SweepReport { rows, advantage_nonincreasing })
}

pub fn write_sweep_csv<W: Write>(report: &SweepReport, w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in &report.rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
