//! Distributed channel-access policy: a per-node infinite-horizon discounted
//! MDP over the buffer level, solved offline by value iteration.
//!
//! The node assumes the other `N - 1` nodes are saturated, prices CAP
//! transmissions with the saturation analytics, and balances throughput
//! against energy and a bandwidth cost that penalizes occupying TDMA slots
//! with little to send.

use crate::csma::{self, SaturationParams};
use crate::dp::{FiniteMdp, value_iterate};
use crate::error::{Error, Result};
use crate::traffic::{ArrivalPmf, TrafficSpec, arrival_pmf};
use crate::types::{Action, MacParams, SuperframeConfig};

/// Everything the per-node MDP needs to evaluate rewards and transitions.
#[derive(Debug, Clone)]
pub struct MdcaContext {
    pub cfg: SuperframeConfig,
    pub mac: MacParams,
    /// Saturation fixed point for (`n`, CAP of `cfg`).
    pub sat: SaturationParams,
    /// Arrival-count pmf over one beacon interval.
    pub arrivals: ArrivalPmf,
    pub b_max: u32,
    /// Discount factor in `[0, 1)`.
    pub gamma: f64,
    /// Energy to transmit one packet, abstract units.
    pub xi_x: f64,
    /// Energy for one carrier sensing, abstract units.
    pub xi_c: f64,
}

impl MdcaContext {
    /// Solve the saturation model and build the arrival pmf for a node with
    /// the given traffic in a network of `n` nodes.
    pub fn new(
        cfg: SuperframeConfig,
        mac: MacParams,
        n: u32,
        traffic: &TrafficSpec,
        theta: f64,
        b_max: u32,
        gamma: f64,
        xi_x: f64,
        xi_c: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let t_cap = cfg.t_cap();
        let sat = if t_cap >= cfg.t_tx {
            csma::solve_saturation(n, t_cap, cfg.t_tx, &mac, theta)?
        } else {
            SaturationParams::cap_unusable()
        };
        let arrivals = arrival_pmf(traffic, cfg.interval(), b_max)?;
        Self::from_parts(cfg, mac, sat, arrivals, b_max, gamma, xi_x, xi_c)
    }

    /// Assemble a context from precomputed pieces.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        cfg: SuperframeConfig,
        mac: MacParams,
        sat: SaturationParams,
        arrivals: ArrivalPmf,
        b_max: u32,
        gamma: f64,
        xi_x: f64,
        xi_c: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
        }
        if !(xi_x > 0.0) || !(xi_c > 0.0) {
            return Err(Error::invalid("per-packet energies must be positive"));
        }
        if arrivals.gamma != cfg.interval() {
            return Err(Error::invalid(format!(
                "arrival pmf interval {} does not match the beacon interval {}",
                arrivals.gamma,
                cfg.interval()
            )));
        }
        if arrivals.x_max() < b_max {
            return Err(Error::invalid(
                "arrival pmf must be resolved at least up to the buffer capacity",
            ));
        }
        Ok(Self {
            cfg,
            mac,
            sat,
            arrivals,
            b_max,
            gamma,
            xi_x,
            xi_c,
        })
    }

    /// Packets a TDMA slot can carry for this node: zero when the superframe
    /// has no CFP, otherwise `eta`.
    pub fn slot_cap(&self) -> u32 {
        if self.cfg.m == 0 { 0 } else { self.cfg.eta }
    }

    /// Per-node goodput in packets per superframe (`kappa * t_cap`).
    pub fn kappa_per_superframe(&self) -> f64 {
        self.sat.kappa * self.cfg.t_cap() as f64
    }

    /// Expected energy to push one packet through the CAP.
    pub fn energy_per_cap_packet(&self) -> Result<f64> {
        energy_per_cap_packet(
            self.sat.p_c_eff,
            self.sat.phi,
            self.mac.max_backoff_stages,
            self.mac.max_retries,
            self.xi_x,
            self.xi_c,
        )
    }
}

/// Expected energy to transmit one packet during the CAP, counting
/// retransmissions and the carrier sensing of every backoff stage:
/// `E[attempts] * xi_x + E[attempts] * E[stages per attempt] * xi_c` with
/// `E[attempts] = (1 - p_c^(w+1)) / (1 - p_c)` and
/// `E[stages] = (1 - phi^(m+1)) / (1 - phi)`.
pub fn energy_per_cap_packet(
    p_c: f64,
    phi: f64,
    m: u32,
    w: u32,
    xi_x: f64,
    xi_c: f64,
) -> Result<f64> {
    if p_c >= 1.0 {
        return Err(Error::SaturationCollapse(
            "collision probability 1 implies unbounded retransmissions".into(),
        ));
    }
    let attempts = (1.0 - p_c.powi(w as i32 + 1)) / (1.0 - p_c);
    let stages = if (1.0 - phi).abs() < 1e-15 {
        (m + 1) as f64
    } else {
        (1.0 - phi.powi(m as i32 + 1)) / (1.0 - phi)
    };
    Ok(attempts * xi_x + attempts * stages * xi_c)
}

/// Expected packets retrieved from the buffer at level `s` under `action`.
pub fn throughput(s: u32, action: Action, ctx: &MdcaContext) -> f64 {
    let s = s as f64;
    let eta = ctx.slot_cap() as f64;
    let phi_cap = ctx.sat.phi_cap;
    match action {
        Action::Defer => 0.0,
        Action::Cap => phi_cap.min(s),
        Action::Cfp => eta.min(s),
        Action::CapCfp => phi_cap.min((s - eta).max(0.0)) + eta.min(s),
    }
}

/// Expected energy spent at level `s` under `action`, abstract units. Slot
/// transmissions cost `2 * xi_x` per packet (data plus the wake window for
/// the acknowledgment); CAP packets cost the full contention price.
pub fn energy(s: u32, action: Action, ctx: &MdcaContext) -> Result<f64> {
    let s = s as f64;
    let eta = ctx.slot_cap() as f64;
    let kappa = ctx.kappa_per_superframe();
    let xi_p = ctx.energy_per_cap_packet()?;
    Ok(match action {
        Action::Defer => 0.0,
        Action::Cap => kappa.min(s) * xi_p,
        Action::Cfp => eta.min(s) * 2.0 * ctx.xi_x,
        Action::CapCfp => kappa.min((s - eta).max(0.0)) * xi_p + eta.min(s) * 2.0 * ctx.xi_x,
    })
}

/// Bandwidth cost: slot actions at buffer levels at or below the slot
/// capacity are penalized by `1 - s / eta`, hitting 1 at an empty buffer.
pub fn bandwidth_cost(s: u32, action: Action, ctx: &MdcaContext) -> f64 {
    if !action.uses_slot() {
        return 0.0;
    }
    let eta = ctx.slot_cap();
    if s == 0 {
        1.0
    } else if s <= eta {
        1.0 - s as f64 / eta as f64
    } else {
        0.0
    }
}

/// Expected one-superframe reward
/// `(mu - s) / max(s, 1) - xi / xi_max - c` with `xi_max = max(s, 1) * xi_p`.
pub fn reward(s: u32, action: Action, ctx: &MdcaContext) -> Result<f64> {
    let mu = throughput(s, action, ctx);
    let xi = energy(s, action, ctx)?;
    let c = bandwidth_cost(s, action, ctx);
    let denom = s.max(1) as f64;
    let xi_max = denom * ctx.energy_per_cap_packet()?;
    Ok((mu - s as f64) / denom - xi / xi_max - c)
}

/// Distribution of the next buffer level after taking `action` at level `s`.
///
/// The buffer moves by the arrivals of the next beacon interval minus the
/// packets retrieved; fractional throughput discretizes via the ceiling, and
/// all mass at or beyond the capacity collapses onto `b_max`.
pub fn transition_pmf(s: u32, action: Action, ctx: &MdcaContext) -> Vec<f64> {
    let mu = throughput(s, action, ctx);
    let b_max = ctx.b_max;
    let mut pmf = vec![0.0; b_max as usize + 1];
    for s2 in 0..b_max {
        let x = (s2 as f64 - s as f64 + mu).ceil();
        if x >= 0.0 {
            pmf[s2 as usize] = ctx.arrivals.prob(x as u32);
        }
    }
    let x_full = (b_max as f64 - s as f64 + mu).ceil().max(0.0);
    pmf[b_max as usize] = ctx.arrivals.tail_mass(x_full as u32);
    pmf
}

/// Buffer-level policy produced by value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpPolicy {
    /// Optimal value per buffer level `0..=b_max`.
    pub value: Vec<f64>,
    /// Optimal action per buffer level.
    pub action: Vec<Action>,
    pub iterations: usize,
    pub final_residual: f64,
    /// Sup-norm change recorded at every iteration.
    pub residuals: Vec<f64>,
}

impl MdpPolicy {
    pub fn action_for(&self, buffer: u32) -> Action {
        let idx = (buffer as usize).min(self.action.len() - 1);
        self.action[idx]
    }
}

/// Build the tabular MDP for a context.
pub fn build_mdp(ctx: &MdcaContext) -> Result<FiniteMdp> {
    let n_states = ctx.b_max as usize + 1;
    let mut reward_table = Vec::with_capacity(n_states);
    let mut transitions = Vec::with_capacity(n_states);
    for s in 0..=ctx.b_max {
        let mut row_r = Vec::with_capacity(Action::ALL.len());
        let mut row_t = Vec::with_capacity(Action::ALL.len());
        for action in Action::ALL {
            row_r.push(reward(s, action, ctx)?);
            let sparse: Vec<(usize, f64)> = transition_pmf(s, action, ctx)
                .into_iter()
                .enumerate()
                .filter(|&(_, p)| p > 0.0)
                .collect();
            row_t.push(sparse);
        }
        reward_table.push(row_r);
        transitions.push(row_t);
    }
    Ok(FiniteMdp {
        n_states,
        n_actions: Action::ALL.len(),
        reward: reward_table,
        transitions,
    })
}

/// Solve the buffer-level MDP by value iteration with the stopping rule
/// `epsilon * (1 - gamma) / (2 * gamma)` on the sup-norm residual.
pub fn value_iteration(ctx: &MdcaContext, epsilon: f64) -> Result<MdpPolicy> {
    let mdp = build_mdp(ctx)?;
    let out = value_iterate(&mdp, ctx.gamma, epsilon);
    Ok(MdpPolicy {
        value: out.value,
        action: out.policy.into_iter().map(|a| Action::ALL[a]).collect(),
        iterations: out.iterations,
        final_residual: out.final_residual,
        residuals: out.residuals,
    })
}

/// What a node actually does within one superframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuperframePlan {
    pub action: Action,
    /// Packets to attempt via slotted CSMA/CA during the CAP.
    pub cap_quota: u32,
    /// Packets to send in the held TDMA slot.
    pub cfp_quota: u32,
    /// Set the slot-request bit on transmitted CAP packets.
    pub set_request_bit: bool,
    /// Send one minimal frame in the held slot carrying the de-allocation
    /// bit.
    pub send_dealloc_frame: bool,
    /// Stop contending once a slot grant arrives and finish in the slot.
    pub halt_cap_on_grant: bool,
}

impl SuperframePlan {
    pub fn idle(action: Action) -> Self {
        Self {
            action,
            cap_quota: 0,
            cfp_quota: 0,
            set_request_bit: false,
            send_dealloc_frame: false,
            halt_cap_on_grant: false,
        }
    }
}

/// Concrete per-superframe behavior for a policy action and slot indicator.
///
/// Without a slot, the slot-seeking actions contend during the CAP with the
/// request bit set and move to the slot on a grant; with a slot, the
/// non-slot actions signal de-allocation with a minimal frame in the slot.
pub fn policy_action(policy: &MdpPolicy, buffer: u32, slot_held: bool, eta: u32) -> SuperframePlan {
    plan_for(policy.action_for(buffer), buffer, slot_held, eta)
}

/// Table-driven plan for an explicit action.
pub fn plan_for(action: Action, buffer: u32, slot_held: bool, eta: u32) -> SuperframePlan {
    let mut plan = SuperframePlan::idle(action);
    match (action, slot_held) {
        (Action::Defer, false) => {}
        (Action::Defer, true) => plan.send_dealloc_frame = true,
        (Action::Cap, held) => {
            plan.cap_quota = buffer;
            plan.send_dealloc_frame = held;
        }
        (Action::Cfp, true) => plan.cfp_quota = eta.min(buffer),
        (Action::Cfp, false) | (Action::CapCfp, false) => {
            plan.cap_quota = buffer;
            plan.set_request_bit = true;
            plan.halt_cap_on_grant = true;
        }
        (Action::CapCfp, true) => {
            plan.cap_quota = buffer.saturating_sub(eta);
            plan.cfp_quota = eta.min(buffer);
        }
    }
    plan
}
