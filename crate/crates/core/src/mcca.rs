//! Centralized coordinator logic: buffer-level tracking and estimation,
//! per-superframe joint action scheduling, and the exact joint MDP kept as a
//! desk-scale oracle.
//!
//! The scheduler sorts nodes by estimated buffer and scans prefix
//! classifications — a pure-CFP block, a CAP+CFP block, a CAP-only block, and
//! a sleeping remainder — maximizing a one-step utility in which the CAP
//! throughput is re-solved for each candidate contender population.

use std::collections::HashMap;

use crate::csma::{self, SaturationParams};
use crate::dp::{FiniteMdp, value_iterate};
use crate::error::{Error, Result};
use crate::mdca::energy_per_cap_packet;
use crate::traffic::ArrivalPmf;
use crate::types::{Action, MacParams, SuperframeConfig};

/// Guard against division by a zero arrival rate in the utility.
const LAMBDA_FLOOR: f64 = 1e-12;

/// Coordinator-side record of the latest buffer reports.
#[derive(Debug, Clone)]
pub struct BufferLedger {
    pub b_max: u32,
    entries: Vec<LedgerEntry>,
}

/// One node's ledger tuple: last reported level, superframes since the
/// report, and the node's arrival rate in packets per beacon interval.
#[derive(Debug, Clone, Copy)]
pub struct LedgerEntry {
    pub q: u32,
    pub f: u32,
    pub lambda_per_sf: f64,
}

impl BufferLedger {
    pub fn new(lambda_per_sf: &[f64], b_max: u32) -> Self {
        Self {
            b_max,
            entries: lambda_per_sf
                .iter()
                .map(|&l| LedgerEntry {
                    q: 0,
                    f: 0,
                    lambda_per_sf: l,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, node: usize) -> &LedgerEntry {
        &self.entries[node]
    }

    /// Record a piggybacked buffer report received this superframe.
    pub fn report(&mut self, node: usize, level: u32) {
        let e = &mut self.entries[node];
        e.q = level.min(self.b_max);
        e.f = 0;
    }

    /// Advance one superframe: every report ages by one.
    pub fn tick(&mut self) {
        for e in &mut self.entries {
            e.f = e.f.saturating_add(1);
        }
    }

    /// Unclipped estimate `q + floor(lambda * f)`. May exceed `b_max`.
    pub fn estimate_raw(&self, node: usize) -> u32 {
        let e = &self.entries[node];
        let extra = (e.lambda_per_sf * e.f as f64).floor();
        e.q.saturating_add(extra.min(u32::MAX as f64) as u32)
    }

    /// Estimated buffer level, clipped at the capacity.
    pub fn estimate(&self, node: usize) -> u32 {
        self.estimate_raw(node).min(self.b_max)
    }

    pub fn estimates_raw(&self) -> Vec<u32> {
        (0..self.entries.len()).map(|n| self.estimate_raw(n)).collect()
    }
}

/// Inputs of the joint scheduler.
#[derive(Debug, Clone)]
pub struct MccaContext {
    pub cfg: SuperframeConfig,
    pub mac: MacParams,
    /// Per-transaction channel outage probability assumed by the analytics.
    pub theta: f64,
    pub b_max: u32,
    pub xi_x: f64,
    pub xi_c: f64,
    /// Per-node arrival rate in packets per beacon interval.
    pub lambda_per_sf: Vec<f64>,
    /// Saturation fixed points indexed by CAP contender count `0..=n`.
    sat_by_contenders: Vec<SaturationParams>,
}

impl MccaContext {
    pub fn new(
        cfg: SuperframeConfig,
        mac: MacParams,
        theta: f64,
        b_max: u32,
        xi_x: f64,
        xi_c: f64,
        lambda_per_sf: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        mac.validate()?;
        let n = lambda_per_sf.len();
        if n == 0 {
            return Err(Error::invalid("need at least one node"));
        }
        let t_cap = cfg.t_cap();
        let mut sat_by_contenders = Vec::with_capacity(n + 1);
        sat_by_contenders.push(SaturationParams::cap_unusable());
        for count in 1..=n as u32 {
            let sat = if t_cap >= cfg.t_tx {
                csma::solve_saturation(count, t_cap, cfg.t_tx, &mac, theta)?
            } else {
                SaturationParams::cap_unusable()
            };
            sat_by_contenders.push(sat);
        }
        Ok(Self {
            cfg,
            mac,
            theta,
            b_max,
            xi_x,
            xi_c,
            lambda_per_sf,
            sat_by_contenders,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.lambda_per_sf.len()
    }

    /// Saturation parameters for a CAP population of `count` contenders.
    pub fn sat_for_contenders(&self, count: usize) -> &SaturationParams {
        &self.sat_by_contenders[count.min(self.sat_by_contenders.len() - 1)]
    }

    /// Energy normalizer `xi_x * eta * t_cap / t_slot`.
    pub fn xi_m(&self) -> f64 {
        self.xi_x * self.cfg.eta as f64 * self.cfg.t_cap() as f64 / self.cfg.t_slot as f64
    }

    /// Expected CAP packet energy for a given contender population.
    fn xi_p(&self, contenders: usize) -> f64 {
        let sat = self.sat_for_contenders(contenders);
        energy_per_cap_packet(
            sat.p_c_eff.min(1.0 - 1e-12),
            sat.phi,
            self.mac.max_backoff_stages,
            self.mac.max_retries,
            self.xi_x,
            self.xi_c,
        )
        .expect("collision probability clamped below 1")
    }
}

/// Per-class expected throughput and energy for a clipped buffer level `q`.
fn class_mu_xi(
    q: f64,
    action: Action,
    eta: f64,
    phi_cap: f64,
    kappa_sf: f64,
    xi_p: f64,
    xi_x: f64,
) -> (f64, f64) {
    match action {
        Action::Defer => (0.0, 0.0),
        Action::Cap => (phi_cap.min(q), kappa_sf.min(q) * xi_p),
        Action::Cfp => (q.min(eta), q.min(eta) * xi_x),
        Action::CapCfp => (
            q.min(eta) + phi_cap.min((q - eta).max(0.0)),
            q.min(eta) * xi_x + kappa_sf.min((q - eta).max(0.0)) * xi_p,
        ),
    }
}

/// One-step utility of a joint action vector against clipped buffer levels.
///
/// The CAP throughput is solved for the number of nodes that actually
/// contend: nodes whose action uses the CAP and that have packets to send.
pub fn joint_utility(ctx: &MccaContext, buffers: &[u32], actions: &[Action]) -> f64 {
    let contenders = buffers
        .iter()
        .zip(actions.iter())
        .filter(|&(&b, a)| a.uses_cap() && b.min(ctx.b_max) > 0)
        .count();
    let sat = ctx.sat_for_contenders(contenders);
    let t_cap = ctx.cfg.t_cap() as f64;
    let (phi_cap, kappa_sf) = (sat.phi_cap, sat.kappa * t_cap);
    let xi_p = ctx.xi_p(contenders);
    let (eta, xi_m) = (ctx.cfg.eta as f64, ctx.xi_m());
    let mut total = 0.0;
    for (n, (&b, &a)) in buffers.iter().zip(actions.iter()).enumerate() {
        let q = b.min(ctx.b_max) as f64;
        let (mu, xi) = class_mu_xi(q, a, eta, phi_cap, kappa_sf, xi_p, ctx.xi_x);
        let lambda = ctx.lambda_per_sf[n].max(LAMBDA_FLOOR);
        total += (mu - q) / lambda - xi / xi_m;
    }
    total
}

/// Joint action vector plus TDMA slot assignments for one superframe.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSchedule {
    /// Action per node, in node-index order.
    pub actions: Vec<Action>,
    /// `slots[i]` is the node holding CFP slot `i`.
    pub slots: Vec<usize>,
    /// Utility achieved by the chosen classification.
    pub utility: f64,
    /// Candidates scanned by the enumeration (complexity guard).
    pub candidates_evaluated: u64,
}

impl JointSchedule {
    pub fn validate(&self, m: u32) -> Result<()> {
        if self.slots.len() > m as usize {
            return Err(Error::invalid(format!(
                "{} slots assigned with only {m} available",
                self.slots.len()
            )));
        }
        for (node, action) in self.actions.iter().enumerate() {
            let held = self.slots.iter().filter(|&&o| o == node).count();
            let expected = usize::from(action.uses_slot());
            if held != expected {
                return Err(Error::invalid(format!(
                    "node {node} with action {} holds {held} slots",
                    action.code()
                )));
            }
        }
        Ok(())
    }
}

/// Sorted-scan approximate solution of the joint scheduling problem.
///
/// `estimates_raw` are the coordinator's unclipped buffer estimates; sorting
/// uses the raw values, throughput and energy use the capacity-clipped ones.
/// The scan enumerates, over nodes sorted by descending buffer, a pure-CFP
/// prefix, a CAP+CFP block, and a CAP-only run, with everything after it
/// sleeping; ties in utility resolve to the earliest candidate in scan order
/// (largest CFP prefix first). Nodes whose estimate is zero are put to sleep
/// and release their slots — every transmit class contributes zero utility
/// for them.
pub fn approx_schedule(estimates_raw: &[u32], ctx: &MccaContext) -> JointSchedule {
    let n = estimates_raw.len();
    assert_eq!(n, ctx.n_nodes(), "estimate count must match the context");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| estimates_raw[b].cmp(&estimates_raw[a]).then(a.cmp(&b)));
    let q_sorted: Vec<u32> = order.iter().map(|&i| estimates_raw[i].min(ctx.b_max)).collect();

    let m_slots = (ctx.cfg.m as usize).min(n);
    let mut candidates = 0u64;
    let mut best_utility = f64::NEG_INFINITY;
    let mut best_blocks = (0usize, 0usize, 0usize); // (g, v, h_end)

    let mut actions_buf = vec![Action::Defer; n];
    for g in (0..=m_slots).rev() {
        for v in 0..=(m_slots - g) {
            // CAP-only run ends at h_end (exclusive, sorted positions); the
            // contender block starts right after the CFP prefix. A
            // single-node network has no regular run at all and keeps one
            // degenerate candidate per block instead.
            let h_ends: Vec<usize> = if g + 2 <= n {
                ((g + 2)..=n).collect()
            } else if n < 2 {
                vec![n]
            } else {
                Vec::new()
            };
            for h_end in h_ends {
                candidates += 1;
                classify(&mut actions_buf, g, v, h_end);
                let utility = utility_sorted(ctx, &order, &q_sorted, &actions_buf);
                if utility > best_utility {
                    best_utility = utility;
                    best_blocks = (g, v, h_end);
                }
            }
        }
    }

    let (g, v, h_end) = best_blocks;
    classify(&mut actions_buf, g, v, h_end);

    // Zero-buffer normalization: an empty node's transmit terms are all zero,
    // so demoting it to sleep leaves the utility unchanged and frees slots.
    let mut actions = vec![Action::Defer; n];
    let mut slots = Vec::new();
    for (pos, &node) in order.iter().enumerate() {
        let action = if q_sorted[pos] == 0 {
            Action::Defer
        } else {
            actions_buf[pos]
        };
        actions[node] = action;
        if action.uses_slot() {
            slots.push(node);
        }
    }

    JointSchedule {
        actions,
        slots,
        utility: best_utility,
        candidates_evaluated: candidates,
    }
}

/// Fill sorted-position classes for blocks `(g, v, h_end)`: positions
/// `[0, g)` pure CFP, `[g, g+v)` CAP+CFP, the rest of `[g, h_end)` CAP only,
/// everything after sleeps.
fn classify(actions: &mut [Action], g: usize, v: usize, h_end: usize) {
    for (pos, slot) in actions.iter_mut().enumerate() {
        *slot = if pos < g {
            Action::Cfp
        } else if pos < g + v {
            Action::CapCfp
        } else if pos < h_end {
            Action::Cap
        } else {
            Action::Defer
        };
    }
}

/// Utility of a sorted classification, with the same contender accounting as
/// [`joint_utility`]: only CAP-class nodes with a nonzero buffer contend.
fn utility_sorted(ctx: &MccaContext, order: &[usize], q_sorted: &[u32], actions: &[Action]) -> f64 {
    let contenders = q_sorted
        .iter()
        .zip(actions.iter())
        .filter(|&(&q, a)| a.uses_cap() && q > 0)
        .count();
    let sat = ctx.sat_for_contenders(contenders);
    let t_cap = ctx.cfg.t_cap() as f64;
    let (phi_cap, kappa_sf) = (sat.phi_cap, sat.kappa * t_cap);
    let xi_p = ctx.xi_p(contenders);
    let (eta, xi_m) = (ctx.cfg.eta as f64, ctx.xi_m());
    let mut total = 0.0;
    for (pos, (&q, &a)) in q_sorted.iter().zip(actions.iter()).enumerate() {
        let (mu, xi) = class_mu_xi(q as f64, a, eta, phi_cap, kappa_sf, xi_p, ctx.xi_x);
        let lambda = ctx.lambda_per_sf[order[pos]].max(LAMBDA_FLOOR);
        total += (mu - q as f64) / lambda - xi / xi_m;
    }
    total
}

/// Closed-form candidate count of the scheduler's scan for `n > m`:
/// `sum_{i=1}^{m+1} (m + 2 - i) * (n - i)`.
pub fn action_space_size(n: u32, m: u32) -> u64 {
    assert!(n > m, "closed form requires more nodes than CFP slots");
    let (n, m) = (n as i64, m as i64);
    let mut total = 0i64;
    for i in 1..=(m + 1) {
        total += (m + 2 - i) * (n - i);
    }
    total as u64
}

/// Exact joint MDP solved by value iteration; a desk-scale oracle.
#[derive(Debug, Clone)]
pub struct JointPolicyOracle {
    pub n_nodes: usize,
    pub b_max: u32,
    /// Feasible joint actions (at most `m` slot users), enumeration order.
    pub joint_actions: Vec<Vec<Action>>,
    pub value: Vec<f64>,
    /// Index into `joint_actions` per joint state.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub final_residual: f64,
}

impl JointPolicyOracle {
    /// Mixed-radix index of a joint buffer vector.
    pub fn state_index(&self, buffers: &[u32]) -> usize {
        let base = self.b_max as usize + 1;
        buffers.iter().fold(0, |acc, &b| acc * base + b as usize)
    }

    pub fn action_for(&self, buffers: &[u32]) -> &[Action] {
        &self.joint_actions[self.policy[self.state_index(buffers)]]
    }
}

/// Solve the joint buffer MDP exactly. Rejects instances with more than
/// 10^4 joint states; cost grows as `O(4^n * (b_max+1)^n)`.
pub fn exact_joint_policy(
    ctx: &MccaContext,
    arrivals: &[ArrivalPmf],
    gamma: f64,
    epsilon: f64,
) -> Result<JointPolicyOracle> {
    let n = ctx.n_nodes();
    if arrivals.len() != n {
        return Err(Error::invalid("need one arrival pmf per node"));
    }
    for pmf in arrivals {
        if pmf.x_max() < ctx.b_max {
            return Err(Error::invalid(
                "arrival pmfs must be resolved up to the buffer capacity",
            ));
        }
    }
    let base = ctx.b_max as usize + 1;
    let n_states = base.checked_pow(n as u32).filter(|&s| s <= 10_000).ok_or_else(|| {
        Error::TooLarge(format!(
            "joint state space ({base}^{n}) exceeds the oracle bound of 10^4"
        ))
    })?;

    let joint_actions: Vec<Vec<Action>> = enumerate_joint_actions(n, ctx.cfg.m);
    let n_actions = joint_actions.len();

    let mut reward = vec![Vec::with_capacity(n_actions); n_states];
    let mut transitions = vec![Vec::with_capacity(n_actions); n_states];
    let mut buffers = vec![0u32; n];
    for s in 0..n_states {
        decode_state(s, base, &mut buffers);
        for action in &joint_actions {
            reward[s].push(joint_utility(ctx, &buffers, action));
            transitions[s].push(joint_transition(ctx, &buffers, action, arrivals, base));
        }
    }

    let mdp = FiniteMdp {
        n_states,
        n_actions,
        reward,
        transitions,
    };
    let out = value_iterate(&mdp, gamma, epsilon);
    Ok(JointPolicyOracle {
        n_nodes: n,
        b_max: ctx.b_max,
        joint_actions,
        value: out.value,
        policy: out.policy,
        iterations: out.iterations,
        final_residual: out.final_residual,
    })
}

fn enumerate_joint_actions(n: usize, m: u32) -> Vec<Vec<Action>> {
    let mut out = Vec::new();
    let mut current = vec![Action::Defer; n];
    fn rec(current: &mut Vec<Action>, pos: usize, slots_left: u32, out: &mut Vec<Vec<Action>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for a in Action::ALL {
            if a.uses_slot() && slots_left == 0 {
                continue;
            }
            current[pos] = a;
            rec(
                current,
                pos + 1,
                slots_left - u32::from(a.uses_slot()),
                out,
            );
        }
    }
    rec(&mut current, 0, m, &mut out);
    out
}

fn decode_state(mut s: usize, base: usize, buffers: &mut [u32]) {
    for slot in buffers.iter_mut().rev() {
        *slot = (s % base) as u32;
        s /= base;
    }
}

/// Product-form joint transition: each node moves independently by its own
/// arrivals minus its class throughput, clipped at the capacity.
fn joint_transition(
    ctx: &MccaContext,
    buffers: &[u32],
    actions: &[Action],
    arrivals: &[ArrivalPmf],
    base: usize,
) -> Vec<(usize, f64)> {
    let contenders = actions.iter().filter(|a| a.uses_cap()).count();
    let sat = ctx.sat_for_contenders(contenders);
    let t_cap = ctx.cfg.t_cap() as f64;
    let (phi_cap, kappa_sf) = (sat.phi_cap, sat.kappa * t_cap);
    let xi_p = ctx.xi_p(contenders);
    let eta = ctx.cfg.eta as f64;

    // Per-node next-level pmfs.
    let per_node: Vec<Vec<f64>> = buffers
        .iter()
        .zip(actions.iter())
        .enumerate()
        .map(|(i, (&b, &a))| {
            let q = b.min(ctx.b_max) as f64;
            let (mu, _) = class_mu_xi(q, a, eta, phi_cap, kappa_sf, xi_p, ctx.xi_x);
            let mut pmf = vec![0.0; base];
            for b2 in 0..ctx.b_max {
                let x = (b2 as f64 - b as f64 + mu).ceil();
                if x >= 0.0 {
                    pmf[b2 as usize] = arrivals[i].prob(x as u32);
                }
            }
            let x_full = (ctx.b_max as f64 - b as f64 + mu).ceil().max(0.0);
            pmf[ctx.b_max as usize] = arrivals[i].tail_mass(x_full as u32);
            pmf
        })
        .collect();

    // Expand the product, skipping zero-mass branches.
    let mut joint: Vec<(usize, f64)> = vec![(0, 1.0)];
    for pmf in &per_node {
        let mut next = Vec::with_capacity(joint.len() * 2);
        for &(idx, p) in &joint {
            for (b2, &pb) in pmf.iter().enumerate() {
                if pb > 0.0 {
                    next.push((idx * base + b2, p * pb));
                }
            }
        }
        joint = next;
    }
    joint
}

/// Text encoding of a schedule: action codes in node order, a semicolon,
/// then `slot:node` pairs.
pub fn beacon_payload(schedule: &JointSchedule) -> String {
    let actions: Vec<&str> = schedule.actions.iter().map(|a| a.code()).collect();
    let slots: Vec<String> = schedule
        .slots
        .iter()
        .enumerate()
        .map(|(slot, &node)| format!("{slot}:{node}"))
        .collect();
    format!("{};{}", actions.join(","), slots.join(","))
}

/// Parse a beacon payload back into a schedule (utility and scan counters
/// are not part of the wire format and come back zeroed).
pub fn parse_beacon_payload(payload: &str) -> Result<JointSchedule> {
    let (action_part, slot_part) = payload
        .split_once(';')
        .ok_or_else(|| Error::Payload("missing `;` separator".into()))?;
    let actions = action_part
        .split(',')
        .filter(|s| !s.is_empty())
        .map(Action::from_code)
        .collect::<Result<Vec<_>>>()?;
    if actions.is_empty() {
        return Err(Error::Payload("no action codes".into()));
    }
    let mut slots = Vec::new();
    for (i, pair) in slot_part.split(',').filter(|s| !s.is_empty()).enumerate() {
        let (slot, node) = pair
            .split_once(':')
            .ok_or_else(|| Error::Payload(format!("slot pair `{pair}` is not slot:node")))?;
        let slot: usize = slot
            .parse()
            .map_err(|_| Error::Payload(format!("bad slot index `{slot}`")))?;
        if slot != i {
            return Err(Error::Payload(format!(
                "slot indices must be consecutive, found {slot} at position {i}"
            )));
        }
        let node: usize = node
            .parse()
            .map_err(|_| Error::Payload(format!("bad node index `{node}`")))?;
        if node >= actions.len() {
            return Err(Error::Payload(format!("node {node} out of range")));
        }
        slots.push(node);
    }
    let schedule = JointSchedule {
        actions,
        slots,
        utility: 0.0,
        candidates_evaluated: 0,
    };
    for (node, action) in schedule.actions.iter().enumerate() {
        let held = schedule.slots.iter().filter(|&&o| o == node).count();
        if usize::from(action.uses_slot()) != held {
            return Err(Error::Payload(format!(
                "node {node} action {} inconsistent with {held} held slots",
                action.code()
            )));
        }
    }
    Ok(schedule)
}

/// Memo of schedules per observed estimate vector, bounded in size; the
/// least recently used half is evicted when the bound is exceeded.
#[derive(Debug)]
pub struct ScheduleCache {
    map: HashMap<Vec<u32>, (JointSchedule, u64)>,
    clock: u64,
    capacity: usize,
}

impl Default for ScheduleCache {
    fn default() -> Self {
        Self::with_capacity(100_000)
    }
}

impl ScheduleCache {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            map: HashMap::new(),
            clock: 0,
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get_or_compute(&mut self, estimates: &[u32], ctx: &MccaContext) -> JointSchedule {
        self.clock += 1;
        let clock = self.clock;
        if let Some((sched, stamp)) = self.map.get_mut(estimates) {
            *stamp = clock;
            return sched.clone();
        }
        let sched = approx_schedule(estimates, ctx);
        if self.map.len() >= self.capacity {
            let mut stamps: Vec<u64> = self.map.values().map(|&(_, s)| s).collect();
            stamps.sort_unstable();
            let cutoff = stamps[stamps.len() / 2];
            self.map.retain(|_, &mut (_, s)| s > cutoff);
        }
        self.map.insert(estimates.to_vec(), (sched.clone(), clock));
        sched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{BatchPmf, TrafficSpec, arrival_pmf};
    use approx::assert_relative_eq;

    fn ctx_with(n: usize, m: u32) -> MccaContext {
        let mut cfg = SuperframeConfig::default_star();
        cfg.m = m;
        MccaContext::new(
            cfg,
            MacParams::default_csma(),
            0.0,
            5,
            1.0,
            0.1,
            vec![0.5; n],
        )
        .unwrap()
    }

    #[test]
    fn ledger_estimates() {
        let mut ledger = BufferLedger::new(&[0.5, 1.0, 0.0], 5);
        ledger.report(0, 2);
        for _ in 0..3 {
            ledger.tick();
        }
        assert_eq!(ledger.estimate(0), 3); // 2 + floor(0.5 * 3)
        ledger.report(1, 5);
        for _ in 0..10 {
            ledger.tick();
        }
        assert_eq!(ledger.estimate_raw(1), 15);
        assert_eq!(ledger.estimate(1), 5);
        assert_eq!(ledger.estimate(2), 0);
    }

    #[test]
    fn ledger_estimate_is_monotone_in_age_and_rate() {
        let mut prev = 0;
        for f in 0..20 {
            let mut ledger = BufferLedger::new(&[0.7], 50);
            ledger.report(0, 1);
            for _ in 0..f {
                ledger.tick();
            }
            let est = ledger.estimate(0);
            assert!(est >= prev);
            prev = est;
        }
        let mut prev = 0;
        for tenths in 0..=20 {
            let mut ledger = BufferLedger::new(&[tenths as f64 / 10.0], 50);
            ledger.report(0, 1);
            for _ in 0..5 {
                ledger.tick();
            }
            let est = ledger.estimate(0);
            assert!(est >= prev);
            prev = est;
        }
    }

    #[test]
    fn empty_buffers_sleep_everyone() {
        let ctx = ctx_with(6, 3);
        let sched = approx_schedule(&[0; 6], &ctx);
        assert!(sched.actions.iter().all(|&a| a == Action::Defer));
        assert!(sched.slots.is_empty());
        sched.validate(3).unwrap();
    }

    #[test]
    fn single_full_node_takes_a_slot() {
        let ctx = ctx_with(1, 1);
        let sched = approx_schedule(&[2], &ctx); // eta packets buffered
        assert_eq!(sched.actions, vec![Action::Cfp]);
        assert_eq!(sched.slots, vec![0]);
    }

    #[test]
    fn sorted_class_order_follows_buffer_order() {
        let ctx = ctx_with(8, 3);
        let estimates = [7u32, 1, 4, 0, 9, 3, 2, 5];
        let sched = approx_schedule(&estimates, &ctx);
        sched.validate(3).unwrap();
        let rank = |a: Action| match a {
            Action::Cfp => 0,
            Action::CapCfp => 1,
            Action::Cap => 2,
            Action::Defer => 3,
        };
        for i in 0..estimates.len() {
            for j in 0..estimates.len() {
                if estimates[i] > estimates[j] {
                    assert!(
                        rank(sched.actions[i]) <= rank(sched.actions[j]),
                        "node {i} (q={}) ranked after node {j} (q={})",
                        estimates[i],
                        estimates[j]
                    );
                }
            }
        }
    }

    #[test]
    fn schedule_never_exceeds_slot_budget() {
        for m in 0..=4u32 {
            let ctx = ctx_with(7, m);
            let sched = approx_schedule(&[5, 4, 4, 3, 3, 2, 2], &ctx);
            assert!(sched.slots.len() <= m as usize);
            sched.validate(m).unwrap();
        }
    }

    #[test]
    fn candidate_count_matches_closed_form() {
        for n in 8..=20u32 {
            let ctx = ctx_with(n as usize, 7);
            let sched = approx_schedule(&vec![1; n as usize], &ctx);
            assert_eq!(sched.candidates_evaluated, action_space_size(n, 7));
            assert_eq!(action_space_size(n, 7) as i64, 36 * n as i64 - 120);
        }
        assert_eq!(action_space_size(10, 7), 240);
        assert_eq!(action_space_size(20, 7), 600);
    }

    #[test]
    fn chosen_schedule_is_the_scan_maximum() {
        let ctx = ctx_with(6, 2);
        let estimates = [5u32, 3, 3, 1, 0, 2];
        let sched = approx_schedule(&estimates, &ctx);
        let clipped: Vec<u32> = estimates.iter().map(|&q| q.min(ctx.b_max)).collect();
        assert_relative_eq!(
            joint_utility(&ctx, &clipped, &sched.actions),
            sched.utility,
            epsilon = 1e-9
        );

        // Re-scan: no classification in the family beats it.
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| estimates[b].cmp(&estimates[a]).then(a.cmp(&b)));
        for g in 0..=2usize {
            for v in 0..=(2 - g) {
                for h_end in (g + 2)..=6usize {
                    let mut actions = vec![Action::Defer; 6];
                    for (pos, &node) in order.iter().enumerate() {
                        actions[node] = if pos < g {
                            Action::Cfp
                        } else if pos < g + v {
                            Action::CapCfp
                        } else if pos < h_end {
                            Action::Cap
                        } else {
                            Action::Defer
                        };
                    }
                    let u = joint_utility(&ctx, &clipped, &actions);
                    assert!(u <= sched.utility + 1e-9);
                }
            }
        }
    }

    #[test]
    fn payload_round_trip() {
        let ctx = ctx_with(5, 2);
        let sched = approx_schedule(&[4, 0, 2, 5, 1], &ctx);
        let text = beacon_payload(&sched);
        let parsed = parse_beacon_payload(&text).unwrap();
        assert_eq!(parsed.actions, sched.actions);
        assert_eq!(parsed.slots, sched.slots);
    }

    #[test]
    fn payload_shapes() {
        let all_sleep = JointSchedule {
            actions: vec![Action::Defer; 4],
            slots: vec![],
            utility: 0.0,
            candidates_evaluated: 0,
        };
        assert_eq!(beacon_payload(&all_sleep), "a1,a1,a1,a1;");
        let two_slots = JointSchedule {
            actions: vec![Action::Cfp, Action::Cap, Action::CapCfp],
            slots: vec![0, 2],
            utility: 0.0,
            candidates_evaluated: 0,
        };
        let text = beacon_payload(&two_slots);
        assert_eq!(text, "a3,a2,a4;0:0,1:2");
        assert_eq!(parse_beacon_payload(&text).unwrap().slots, vec![0, 2]);
    }

    #[test]
    fn malformed_payloads_are_rejected(){
        assert!(parse_beacon_payload("a1,a2").is_err());
        assert!(parse_beacon_payload("a9;").is_err());
        assert!(parse_beacon_payload("a3,a1;0:5").is_err());
        assert!(parse_beacon_payload("a3,a1;1:0").is_err());
        assert!(parse_beacon_payload("a1,a1;0:0").is_err());
    }

    #[test]
    fn schedule_cache_hits_and_evicts() {
        let ctx = ctx_with(4, 2);
        let mut cache = ScheduleCache::with_capacity(4);
        let a = cache.get_or_compute(&[1, 2, 3, 4], &ctx);
        let b = cache.get_or_compute(&[1, 2, 3, 4], &ctx);
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
        for q in 0..10u32 {
            cache.get_or_compute(&[q, q, q, q], &ctx);
        }
        assert!(cache.len() <= 4);
    }

    #[test]
    fn joint_oracle_rejects_large_instances() {
        let ctx = ctx_with(10, 2);
        let spec = TrafficSpec::per_interval(0.5, 388, BatchPmf::unit()).unwrap();
        let pmf = arrival_pmf(&spec, 388, 5).unwrap();
        let arrivals = vec![pmf; 10];
        assert!(matches!(
            exact_joint_policy(&ctx, &arrivals, 0.9, 1e-6),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn joint_oracle_value_is_symmetric_for_identical_nodes() {
        let ctx = ctx_with(2, 1);
        let spec = TrafficSpec::per_interval(0.5, 388, BatchPmf::unit()).unwrap();
        let pmf = arrival_pmf(&spec, 388, 5).unwrap();
        let oracle = exact_joint_policy(&ctx, &[pmf.clone(), pmf], 0.9, 1e-8).unwrap();
        for b1 in 0..=5u32 {
            for b2 in 0..=5u32 {
                let v_ab = oracle.value[oracle.state_index(&[b1, b2])];
                let v_ba = oracle.value[oracle.state_index(&[b2, b1])];
                assert_relative_eq!(v_ab, v_ba, epsilon = 1e-6);
            }
        }
    }
}
