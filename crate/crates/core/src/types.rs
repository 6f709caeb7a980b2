//! Shared vocabulary: superframe geometry, MAC parameters, node actions, and
//! node state.
//!
//! Every duration in the crate is an integer count of unit backoff periods
//! (UBP). One UBP is 320 µs of air time; no finer-grained time exists
//! anywhere in the system.

use crate::error::{Error, Result};

/// Physical length of one unit backoff period, in seconds.
pub const UBP_SECONDS: f64 = 320e-6;

/// Superframe timing skeleton shared by every module.
///
/// A superframe is one beacon of `t_beacon` UBP followed by `k` slots of
/// `t_slot` UBP each. The last `m` slots form the contention-free period
/// (CFP); the first `k - m` slots form the contention access period (CAP).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuperframeConfig {
    /// Slot count per superframe.
    pub k: u32,
    /// CFP slot count (TDMA slots), `0 <= m <= k`.
    pub m: u32,
    /// Slot length in UBP.
    pub t_slot: u32,
    /// Beacon length in UBP.
    pub t_beacon: u32,
    /// Packets transmittable per TDMA slot.
    pub eta: u32,
    /// Consecutive-superframe slot-tenure limit.
    pub rho: u32,
    /// Packet transaction time in UBP (data + ack + IFS + propagation).
    pub t_tx: u32,
}

impl SuperframeConfig {
    pub fn new(
        k: u32,
        m: u32,
        t_slot: u32,
        t_beacon: u32,
        eta: u32,
        rho: u32,
        t_tx: u32,
    ) -> Result<Self> {
        let cfg = Self {
            k,
            m,
            t_slot,
            t_beacon,
            eta,
            rho,
            t_tx,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m > self.k {
            return Err(Error::invalid(format!(
                "m = {} exceeds slot count k = {}",
                self.m, self.k
            )));
        }
        if self.t_slot < 1 {
            return Err(Error::invalid("t_slot must be at least 1 UBP"));
        }
        if self.eta < 1 {
            return Err(Error::invalid("eta must be at least 1"));
        }
        if self.rho < 1 {
            return Err(Error::invalid("rho must be at least 1"));
        }
        if self.t_tx < 1 {
            return Err(Error::invalid("t_tx must be at least 1 UBP"));
        }
        Ok(())
    }

    /// Superframe length excluding the beacon, `k * t_slot` UBP.
    pub fn t_sf(&self) -> u32 {
        self.k * self.t_slot
    }

    /// CAP length, `(k - m) * t_slot` UBP.
    pub fn t_cap(&self) -> u32 {
        (self.k - self.m) * self.t_slot
    }

    /// CFP length, `m * t_slot` UBP.
    pub fn t_cfp(&self) -> u32 {
        self.m * self.t_slot
    }

    /// Beacon interval: beacon plus the slotted portion, in UBP. This is the
    /// packet-arrival accounting interval.
    pub fn interval(&self) -> u32 {
        self.t_beacon + self.t_sf()
    }

    /// Timing layout of one superframe's slotted portion.
    ///
    /// Offsets are relative to the end of the beacon: the CAP spans
    /// `[0, t_cap)` and CFP slot `i` spans
    /// `[t_cap + i*t_slot, t_cap + (i+1)*t_slot)`.
    pub fn layout(&self) -> Result<SuperframeLayout> {
        self.validate()?;
        let t_cap = self.t_cap();
        let slots = (0..self.m)
            .map(|i| {
                let start = t_cap + i * self.t_slot;
                (start, start + self.t_slot)
            })
            .collect();
        Ok(SuperframeLayout {
            t_sf: self.t_sf(),
            t_cap,
            t_cfp: self.t_cfp(),
            cfp_slots: slots,
        })
    }

    /// Paper-style defaults for a 16-slot superframe with a 7-slot CFP.
    pub fn default_star() -> Self {
        Self {
            k: 16,
            m: 7,
            t_slot: 24,
            t_beacon: 4,
            eta: 2,
            rho: 18,
            t_tx: 10,
        }
    }
}

/// Timing record produced by [`SuperframeConfig::layout`]. All values in UBP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperframeLayout {
    pub t_sf: u32,
    pub t_cap: u32,
    pub t_cfp: u32,
    /// Half-open `[start, end)` boundaries of each CFP slot.
    pub cfp_slots: Vec<(u32, u32)>,
}

/// Slotted CSMA/CA contention parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacParams {
    /// Contention window per backoff stage. Stages beyond the schedule reuse
    /// the last entry, so `[8, 16, 32]` means 8, 16, 32, 32, ...
    pub cw_schedule: Vec<u32>,
    /// Maximum backoff stages before a packet is discarded (when drops are
    /// enabled).
    pub max_backoff_stages: u32,
    /// Maximum retransmissions before a packet is dropped (when drops are
    /// enabled).
    pub max_retries: u32,
    /// Whether the backoff and retry limits actually drop packets.
    pub drop_enabled: bool,
}

impl MacParams {
    pub fn new(
        cw_schedule: Vec<u32>,
        max_backoff_stages: u32,
        max_retries: u32,
        drop_enabled: bool,
    ) -> Result<Self> {
        let p = Self {
            cw_schedule,
            max_backoff_stages,
            max_retries,
            drop_enabled,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cw_schedule.is_empty() {
            return Err(Error::invalid("contention window schedule is empty"));
        }
        if let Some(w) = self.cw_schedule.iter().find(|&&w| w < 2) {
            return Err(Error::invalid(format!(
                "contention window {w} is below the minimum of 2"
            )));
        }
        Ok(())
    }

    /// Contention window for backoff stage `i`.
    pub fn cw(&self, stage: u32) -> u32 {
        let idx = (stage as usize).min(self.cw_schedule.len() - 1);
        self.cw_schedule[idx]
    }

    /// Default contention parameters: windows 8, 16, 32, ..., four extra
    /// backoff stages, three retransmissions, no drops.
    pub fn default_csma() -> Self {
        Self {
            cw_schedule: vec![8, 16, 32],
            max_backoff_stages: 4,
            max_retries: 3,
            drop_enabled: false,
        }
    }
}

/// Per-superframe node action.
///
/// The variants are totally ordered from cheapest to most expensive; argmax
/// ties anywhere in the crate resolve toward the lower (lower-energy) action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    /// Defer transmission (low-power mode).
    Defer,
    /// Transmit during the CAP via slotted CSMA/CA.
    Cap,
    /// Transmit during the CFP in an assigned TDMA slot.
    Cfp,
    /// Transmit during both CAP and CFP.
    CapCfp,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Defer, Action::Cap, Action::Cfp, Action::CapCfp];

    /// Does the action use a TDMA slot?
    pub fn uses_slot(&self) -> bool {
        matches!(self, Action::Cfp | Action::CapCfp)
    }

    /// Does the action contend during the CAP?
    pub fn uses_cap(&self) -> bool {
        matches!(self, Action::Cap | Action::CapCfp)
    }

    /// Compact code used in beacon payloads and cache files.
    pub fn code(&self) -> &'static str {
        match self {
            Action::Defer => "a1",
            Action::Cap => "a2",
            Action::Cfp => "a3",
            Action::CapCfp => "a4",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        match code {
            "a1" => Ok(Action::Defer),
            "a2" => Ok(Action::Cap),
            "a3" => Ok(Action::Cfp),
            "a4" => Ok(Action::CapCfp),
            other => Err(Error::Payload(format!("unknown action code `{other}`"))),
        }
    }
}

/// Snapshot of one node's MAC state at a superframe boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeState {
    pub node_id: usize,
    /// Packets in the MAC buffer, at most `b_max`.
    pub buffer: u32,
    /// TDMA slot indicator: true while the node holds a slot.
    pub slot_indicator: bool,
    /// Consecutive superframes the current slot has been held.
    pub slot_tenure: u32,
}

impl NodeState {
    pub fn validate(&self, b_max: u32, rho: u32) -> Result<()> {
        if self.buffer > b_max {
            return Err(Error::invalid(format!(
                "buffer {} exceeds capacity {b_max}",
                self.buffer
            )));
        }
        if self.slot_tenure > rho {
            return Err(Error::invalid(format!(
                "slot tenure {} exceeds the limit {rho}",
                self.slot_tenure
            )));
        }
        if self.slot_tenure > 0 && !self.slot_indicator {
            return Err(Error::invalid("positive tenure without a held slot"));
        }
        Ok(())
    }
}

/// Dimensionless offered traffic `G = N * lambda * t_tx / (t_sf + t_beacon)`
/// for a per-node batch rate `lambda` expressed in packets per beacon
/// interval.
pub fn offered_traffic(n: u32, lambda_per_interval: f64, cfg: &SuperframeConfig) -> f64 {
    n as f64 * lambda_per_interval * cfg.t_tx as f64 / cfg.interval() as f64
}

/// Per-node batch rate (packets per beacon interval) that produces offered
/// traffic `g` with `n` nodes. Inverse of [`offered_traffic`].
pub fn lambda_for_offered_traffic(n: u32, g: f64, cfg: &SuperframeConfig) -> f64 {
    g * cfg.interval() as f64 / (n as f64 * cfg.t_tx as f64)
}
