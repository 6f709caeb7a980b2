//! Run metrics, packet-conservation accounting, and replication summaries.

use crate::error::{Error, Result};

/// Transceiver power draw per radio state, in watts, plus the abstract
/// per-packet energies used by the MDP solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub sleep_w: f64,
    pub tx_w: f64,
    pub rx_w: f64,
    pub idle_w: f64,
    /// Abstract per-packet transmit energy for solver contexts.
    pub xi_x: f64,
    /// Abstract per-sensing energy for solver contexts.
    pub xi_c: f64,
}

impl Default for EnergyModel {
    /// Low-power transceiver profile: 36 µW sleep, 31.32 mW transmit,
    /// 33.84 mW receive, 766.8 µW idle.
    fn default() -> Self {
        Self {
            sleep_w: 36e-6,
            tx_w: 31.32e-3,
            rx_w: 33.84e-3,
            idle_w: 766.8e-6,
            xi_x: 1.0,
            xi_c: 0.1,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sleep_w", self.sleep_w),
            ("tx_w", self.tx_w),
            ("rx_w", self.rx_w),
            ("idle_w", self.idle_w),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Per-node counters. The radio-state UBP counters cover every UBP of the
/// run exactly once.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeMetrics {
    pub generated: u64,
    pub delivered: u64,
    /// Lost to buffer overflow at superframe end.
    pub discarded: u64,
    /// Lost to the backoff or retry limits.
    pub dropped: u64,
    pub in_buffer_at_end: u64,
    pub delivered_cap: u64,
    pub delivered_cfp: u64,
    /// Transmissions by this node that ended in a collision.
    pub collisions: u64,
    pub delay_sum_ubp: u128,
    pub delay_min_ubp: u64,
    pub delay_max_ubp: u64,
    pub energy_j: f64,
    pub ubp_sleep: u64,
    pub ubp_idle: u64,
    pub ubp_rx: u64,
    pub ubp_tx: u64,
}

impl NodeMetrics {
    pub(crate) fn new() -> Self {
        Self {
            delay_min_ubp: u64::MAX,
            ..Self::default()
        }
    }

    pub fn ubp_total(&self) -> u64 {
        self.ubp_sleep + self.ubp_idle + self.ubp_rx + self.ubp_tx
    }
}

/// Whole-run metrics with exact packet conservation:
/// `generated = delivered + discarded + dropped + in_buffer_at_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub nodes: Vec<NodeMetrics>,
    pub generated: u64,
    pub delivered: u64,
    pub discarded: u64,
    pub dropped: u64,
    pub in_buffer_at_end: u64,
    pub pdr: f64,
    pub delay_mean_ubp: f64,
    pub delay_min_ubp: u64,
    pub delay_max_ubp: u64,
    /// Total energy including the coordinator.
    pub energy_total_j: f64,
    pub coordinator_energy_j: f64,
    pub energy_per_delivered_j: f64,
    /// First-assessment initiations during CAP (network-wide).
    pub cap_cca1_attempts: u64,
    /// First assessments that found the channel busy.
    pub cap_cca1_busy: u64,
    /// Second assessments performed.
    pub cap_cca2_attempts: u64,
    /// Second assessments that found the channel busy.
    pub cap_cca2_busy: u64,
    /// Transactions launched during CAP.
    pub cap_tx_attempts: u64,
    /// CAP transactions that ended in a collision.
    pub cap_collided_tx: u64,
    pub horizon_superframes: u64,
}

impl SimMetrics {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn aggregate(
        nodes: Vec<NodeMetrics>,
        coordinator_energy_j: f64,
        cap_cca1_attempts: u64,
        cap_cca1_busy: u64,
        cap_cca2_attempts: u64,
        cap_cca2_busy: u64,
        cap_tx_attempts: u64,
        cap_collided_tx: u64,
        horizon_superframes: u64,
    ) -> Self {
        let generated: u64 = nodes.iter().map(|n| n.generated).sum();
        let delivered: u64 = nodes.iter().map(|n| n.delivered).sum();
        let discarded: u64 = nodes.iter().map(|n| n.discarded).sum();
        let dropped: u64 = nodes.iter().map(|n| n.dropped).sum();
        let in_buffer_at_end: u64 = nodes.iter().map(|n| n.in_buffer_at_end).sum();
        let delay_sum: u128 = nodes.iter().map(|n| n.delay_sum_ubp).sum();
        let delay_min_ubp = nodes
            .iter()
            .map(|n| n.delay_min_ubp)
            .min()
            .unwrap_or(u64::MAX);
        let delay_max_ubp = nodes.iter().map(|n| n.delay_max_ubp).max().unwrap_or(0);
        let node_energy: f64 = nodes.iter().map(|n| n.energy_j).sum();
        let energy_total_j = node_energy + coordinator_energy_j;
        Self {
            generated,
            delivered,
            discarded,
            dropped,
            in_buffer_at_end,
            pdr: delivered as f64 / generated as f64,
            delay_mean_ubp: delay_sum as f64 / delivered as f64,
            delay_min_ubp: if delivered == 0 { 0 } else { delay_min_ubp },
            delay_max_ubp,
            energy_total_j,
            coordinator_energy_j,
            energy_per_delivered_j: energy_total_j / delivered as f64,
            cap_cca1_attempts,
            cap_cca1_busy,
            cap_cca2_attempts,
            cap_cca2_busy,
            cap_tx_attempts,
            cap_collided_tx,
            horizon_superframes,
            nodes,
        }
    }

    /// Exact conservation identity; holds on every run.
    pub fn conservation_holds(&self) -> bool {
        self.generated == self.delivered + self.discarded + self.dropped + self.in_buffer_at_end
    }

    /// Network goodput in packets per superframe.
    pub fn goodput_per_superframe(&self) -> f64 {
        self.delivered as f64 / self.horizon_superframes as f64
    }

    pub fn delay_mean_ms(&self) -> f64 {
        self.delay_mean_ubp * crate::types::UBP_SECONDS * 1e3
    }
}

/// Mean/min/max of one metric across replications. The mean sums values in
/// ascending order, so it is invariant to seed permutation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty());
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sum: f64 = sorted.iter().sum();
        Self {
            mean: sum / sorted.len() as f64,
            min: sorted[0],
            max: *sorted.last().unwrap(),
        }
    }
}

/// Per-metric aggregation over independent replications of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub pdr: Stat,
    pub delay_mean_ubp: Stat,
    pub energy_per_delivered_j: Stat,
    pub goodput_per_superframe: Stat,
}

impl ReplicationSummary {
    pub fn from_runs(runs: &[SimMetrics]) -> Self {
        let collect = |f: &dyn Fn(&SimMetrics) -> f64| {
            Stat::from_values(&runs.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            replications: runs.len(),
            pdr: collect(&|m| m.pdr),
            delay_mean_ubp: collect(&|m| m.delay_mean_ubp),
            energy_per_delivered_j: collect(&|m| m.energy_per_delivered_j),
            goodput_per_superframe: collect(&|m| m.goodput_per_superframe()),
        }
    }
}
