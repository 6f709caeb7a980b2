//! Saturation-mode analytics for slotted CSMA/CA during the CAP.
//!
//! The per-node backoff process is modeled as a renewal chain: in each UBP a
//! node in backoff stage `i` decrements a counter drawn uniformly from
//! `[0, cw_i - 1]`; on reaching zero it performs two consecutive clear-channel
//! assessments (idle with probabilities `alpha`, then `beta`); a busy channel
//! advances the stage up to the backoff limit, after which the packet is
//! discarded (when drops are enabled); a collision triggers a retransmission
//! up to the retry limit, after which the packet is dropped. A transmission
//! is deferred when the remaining CAP cannot hold the transaction, which
//! gates stage advancement via `phi = (1 - alpha*beta) * (1 - p_d)`.
//!
//! `p_cs` — the stationary per-UBP probability of initiating the first
//! assessment — is the fixed point of this chain coupled with the channel
//! feedback of the other `N - 1` saturated nodes.

pub mod fading;

use crate::error::{Error, Result};
use crate::types::MacParams;

const DELTA: f64 = 1e-8;
const MAX_OUTER_ITERATIONS: usize = 100_000;
const INNER_TOLERANCE: f64 = 1e-14;
const MAX_INNER_ITERATIONS: usize = 10_000;

/// Fixed-point outputs of the saturation model.
///
/// `kappa` is the per-node goodput in packets per CAP UBP; `phi_cap` is the
/// per-node MAC throughput in packets per superframe's CAP (buffer retrieval
/// rate, i.e. goodput inflated by discarded and dropped packets).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationParams {
    /// P(channel idle at the first carrier sensing).
    pub alpha: f64,
    /// P(channel idle at the second sensing | idle at the first).
    pub beta: f64,
    /// Per-UBP probability of initiating the first assessment.
    pub p_cs: f64,
    /// Collision probability `1 - (1 - p_cs)^(n-1)`.
    pub p_c: f64,
    /// Outage-adjusted collision probability.
    pub p_c_eff: f64,
    /// Virtual carrier-sensing probability folding outage in.
    pub p_cs_virtual: f64,
    /// Per-node goodput, packets per CAP UBP.
    pub kappa: f64,
    /// P(packet discarded by the backoff limit).
    pub p_discard: f64,
    /// P(packet dropped by the retry limit).
    pub p_drop: f64,
    /// Per-node MAC throughput, packets per superframe's CAP. Zero when the
    /// normalization collapses (a loss probability of 1).
    pub phi_cap: f64,
    /// Stage-advance probability `(1 - alpha*beta) * (1 - p_d)`.
    pub phi: f64,
    /// Deferral probability `t_tx / t_cap`.
    pub p_d: f64,
}

impl SaturationParams {
    /// Degenerate parameters for a CAP too short to carry a transaction.
    pub fn cap_unusable() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            p_cs: 0.0,
            p_c: 0.0,
            p_c_eff: 0.0,
            p_cs_virtual: 0.0,
            kappa: 0.0,
            p_discard: 0.0,
            p_drop: 0.0,
            phi_cap: 0.0,
            phi: 0.0,
            p_d: 1.0,
        }
    }
}

/// Outage-adjusted collision probability `p_c * (1 - theta) + theta`.
pub fn effective_collision(p_c: f64, theta: f64) -> f64 {
    p_c * (1.0 - theta) + theta
}

/// Virtual carrier-sensing probability `1 - (1 - p_c_eff)^(1/(n-1))`.
///
/// A single node has no competitors, so `n = 1` returns 0 by definition.
pub fn virtual_cs(p_c_eff: f64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    1.0 - (1.0 - p_c_eff).powf(1.0 / (n - 1) as f64)
}

/// Per-node goodput `alpha * beta * p_cs * (1 - p_cs_virtual)^(n-1)`, in
/// packets per CAP UBP.
pub fn goodput(alpha: f64, beta: f64, p_cs: f64, p_cs_virtual: f64, n: u32) -> f64 {
    alpha * beta * p_cs * (1.0 - p_cs_virtual).powi(n.saturating_sub(1) as i32)
}

/// Probability of a packet being discarded by the backoff-stage limit.
///
/// `phi` is the per-stage advance probability, `p_c_eff` the effective
/// collision probability, `m` the backoff-stage limit and `w` the retry
/// limit. The removable singularity at `p_c_eff * (1 - phi^(m+1)) = 1` takes
/// the limit value of `w + 1` equal terms.
pub fn p_discard(phi: f64, p_c_eff: f64, m: u32, w: u32) -> f64 {
    let exhaust = phi.powi(m as i32 + 1);
    let q = p_c_eff * (1.0 - exhaust);
    if (1.0 - q).abs() < 1e-15 {
        return exhaust * (w + 1) as f64;
    }
    exhaust * (1.0 - q.powi(w as i32 + 1)) / (1.0 - q)
}

/// Probability of a packet being dropped by the retry limit:
/// `p_c_eff^(w+1)`.
pub fn p_drop(p_c_eff: f64, w: u32) -> f64 {
    p_c_eff.powi(w as i32 + 1)
}

/// MAC throughput per superframe's CAP:
/// `kappa * t_cap / ((1 - p_discard) * (1 - p_drop))`.
pub fn mac_throughput(kappa: f64, p_discard: f64, p_drop: f64, t_cap: u32) -> Result<f64> {
    let denom = (1.0 - p_discard) * (1.0 - p_drop);
    if denom <= 0.0 {
        return Err(Error::SaturationCollapse(format!(
            "loss probabilities discard={p_discard}, drop={p_drop} leave no surviving packets"
        )));
    }
    Ok(kappa * t_cap as f64 / denom)
}

/// Expected counting time at a backoff stage: `(cw - 1) / 2` UBP.
fn counting_time(mac: &MacParams, stage: u32) -> f64 {
    (mac.cw(stage) as f64 - 1.0) / 2.0
}

/// Expected CAP time consumed by one visit to backoff stage `i`.
///
/// Deferral wastes the CAP tail, then redraws the counter and transmits at
/// the start of the next CAP; otherwise the visit runs CCA1, conditionally
/// CCA2, and conditionally the transaction.
fn visit_time(mac: &MacParams, stage: u32, alpha: f64, beta: f64, p_d: f64, t_tx: f64) -> f64 {
    let c = counting_time(mac, stage);
    let dead = (t_tx + 2.0) / 2.0;
    c + p_d * (dead + c + 2.0 + t_tx) + (1.0 - p_d) * (1.0 + alpha * (1.0 + beta * t_tx))
}

/// Expected first-assessment count and CAP time per CSMA/CA procedure.
fn chain_sums(mac: &MacParams, phi: f64, alpha: f64, beta: f64, p_d: f64, t_tx: f64) -> (f64, f64) {
    if mac.drop_enabled {
        let mut attempts = 0.0;
        let mut time = 0.0;
        let mut weight = 1.0;
        for stage in 0..=mac.max_backoff_stages {
            attempts += weight;
            time += weight * visit_time(mac, stage, alpha, beta, p_d, t_tx);
            weight *= phi;
        }
        (attempts, time)
    } else {
        // Unlimited stages; the contention window saturates at the last
        // schedule entry, so the geometric tail has a constant visit time.
        let sat = mac.cw_schedule.len() as u32 - 1;
        let mut attempts = 0.0;
        let mut time = 0.0;
        let mut weight = 1.0;
        for stage in 0..sat {
            attempts += weight;
            time += weight * visit_time(mac, stage, alpha, beta, p_d, t_tx);
            weight *= phi;
        }
        let tail = weight / (1.0 - phi);
        attempts += tail;
        time += tail * visit_time(mac, sat, alpha, beta, p_d, t_tx);
        (attempts, time)
    }
}

/// Channel feedback seen by one node given everyone's sensing rates and
/// idle probabilities.
///
/// The channel is treated as a renewal alternation of transmission windows
/// (`t_tx` UBP of busy air, shared by simultaneous starters) and idle gaps.
/// The first assessment of node `i` is busy when any competitor's
/// transmission covers it (`alpha` from per-competitor occupancy); the
/// second assessment is busy when a competitor starts in that exact UBP.
/// Start instants live only in gaps, so the relevant competitor rate is the
/// in-gap attempt density `p_cs * alpha / (1 - busy_fraction)`.
fn channel_feedback(
    i: usize,
    p_cs: &[f64],
    alpha: &[f64],
    beta: &[f64],
    t_tx: f64,
) -> (f64, f64) {
    let n = p_cs.len();
    // Mean simultaneous starters per window and the distinct-window rate.
    let start_rate: f64 = (0..n).map(|j| p_cs[j] * alpha[j] * beta[j]).sum();
    let cohort = 1.0 + p_cs.iter().sum::<f64>() - p_cs.iter().cloned().fold(0.0, f64::max) / 1.0;
    let window_rate = start_rate / cohort.max(1.0);
    // Windows are separated by at least the two assessments, which bounds
    // the busy fraction structurally.
    let busy = (window_rate * t_tx).min(t_tx / (t_tx + 2.0));

    let mut a = 1.0;
    let mut b = 1.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        let s_j = p_cs[j] * alpha[j] * beta[j];
        a *= (1.0 - (s_j * t_tx).min(1.0)).max(0.0);
        let gap_density = (p_cs[j] * alpha[j] / (1.0 - busy)).min(1.0);
        b *= 1.0 - gap_density;
    }
    (a, b)
}

/// One chain evaluation: new `p_cs` candidate for a node given the current
/// `(alpha, beta)` and its effective collision probability.
fn p_cs_candidate(mac: &MacParams, alpha: f64, beta: f64, p_d: f64, t_tx: f64) -> (f64, f64) {
    let phi = (1.0 - alpha * beta) * (1.0 - p_d);
    let (attempts, time) = chain_sums(mac, phi, alpha, beta, p_d, t_tx);
    (attempts / time, phi)
}

/// Inner fixed point for the idle probabilities at a given `p_cs` vector.
fn solve_idle_probs(p_cs: &[f64], macs_eq: bool, t_tx: f64, alpha: &mut [f64], beta: &mut [f64]) {
    let n = p_cs.len();
    let mut s = vec![0.0; n];
    for _ in 0..MAX_INNER_ITERATIONS {
        for j in 0..n {
            s[j] = p_cs[j] * alpha[j] * beta[j];
        }
        let mut delta = 0.0_f64;
        for i in 0..n {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| s[j]).collect();
            let (a_new, b_new) = channel_idle(&others, t_tx);
            let a_next = 0.5 * alpha[i] + 0.5 * a_new;
            let b_next = 0.5 * beta[i] + 0.5 * b_new;
            delta = delta.max((a_next - alpha[i]).abs()).max((b_next - beta[i]).abs());
            alpha[i] = a_next;
            beta[i] = b_next;
            if macs_eq {
                // Homogeneous case: all nodes share the same solution.
                for j in 0..n {
                    alpha[j] = alpha[i];
                    beta[j] = beta[i];
                }
                break;
            }
        }
        if delta < INNER_TOLERANCE {
            break;
        }
    }
}

/// Per-node chain description for the heterogeneous solver.
#[derive(Debug, Clone)]
pub struct NodeChainSpec {
    pub mac: MacParams,
    /// Channel outage probability for the node's uplink.
    pub theta: f64,
}

/// Collision probability seen by node `n` given the carrier-sensing
/// probabilities of all nodes: `1 - prod_{j != n} (1 - p_cs_j)`.
pub fn collision_prob_hetero(p_cs: &[f64], n: usize) -> f64 {
    let mut idle = 1.0;
    for (j, &p) in p_cs.iter().enumerate() {
        if j != n {
            idle *= 1.0 - p;
        }
    }
    1.0 - idle
}

/// Solve the homogeneous saturation fixed point for `n` competing nodes.
///
/// `theta` is the per-transaction channel outage probability, folded into the
/// collision probability before the chain is re-evaluated. Iteration stops
/// when successive `p_cs` evaluations differ by less than 1e-8.
pub fn solve_saturation(
    n: u32,
    t_cap: u32,
    t_tx: u32,
    mac: &MacParams,
    theta: f64,
) -> Result<SaturationParams> {
    if n < 1 {
        return Err(Error::invalid("need at least one node"));
    }
    if t_cap < t_tx {
        return Err(Error::invalid(format!(
            "CAP of {t_cap} UBP cannot carry a {t_tx}-UBP transaction"
        )));
    }
    mac.validate()?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("outage probability {theta} outside [0, 1]")));
    }

    let specs = vec![
        NodeChainSpec {
            mac: mac.clone(),
            theta,
        };
        n as usize
    ];
    let solved = solve_heterogeneous(&specs, t_cap, t_tx)?;
    Ok(solved[0])
}

/// Re-evaluate the chain once at a claimed solution and return
/// `|p_cs - chain(p_cs)|`.
pub fn saturation_residual(
    params: &SaturationParams,
    n: u32,
    t_cap: u32,
    t_tx: u32,
    mac: &MacParams,
    theta: f64,
) -> f64 {
    let p_cs = vec![params.p_cs; n as usize];
    let mut alpha = vec![params.alpha; n as usize];
    let mut beta = vec![params.beta; n as usize];
    solve_idle_probs(&p_cs, true, t_tx as f64, &mut alpha, &mut beta);
    let p_d = t_tx as f64 / t_cap as f64;
    let _ = theta;
    let (candidate, _) = p_cs_candidate(mac, alpha[0], beta[0], p_d, t_tx as f64);
    (candidate - params.p_cs).abs()
}

/// Solve the saturation fixed point with per-node MAC parameters and outage.
///
/// Returns one parameter set per node. Iteration stops when the supremum
/// change across the whole `p_cs` vector drops below 1e-8; the update is
/// damped by one half to prevent oscillation.
pub fn solve_heterogeneous(
    specs: &[NodeChainSpec],
    t_cap: u32,
    t_tx: u32,
) -> Result<Vec<SaturationParams>> {
    let n = specs.len();
    if n == 0 {
        return Err(Error::invalid("need at least one node"));
    }
    for spec in specs {
        spec.mac.validate()?;
    }
    if t_cap < t_tx {
        return Err(Error::invalid(format!(
            "CAP of {t_cap} UBP cannot carry a {t_tx}-UBP transaction"
        )));
    }

    let t_tx_f = t_tx as f64;
    let p_d = t_tx_f / t_cap as f64;
    let homogeneous = specs
        .windows(2)
        .all(|w| w[0].mac == w[1].mac && w[0].theta == w[1].theta);

    let mut p_cs = vec![0.05_f64; n];
    let mut alpha = vec![1.0_f64; n];
    let mut beta = vec![1.0_f64; n];
    let mut phis = vec![0.0_f64; n];
    let mut residual = f64::INFINITY;

    for _iter in 0..MAX_OUTER_ITERATIONS {
        solve_idle_probs(&p_cs, homogeneous, t_tx_f, &mut alpha, &mut beta);
        residual = 0.0;
        let mut candidates = vec![0.0; n];
        for i in 0..n {
            let (candidate, phi) = p_cs_candidate(&specs[i].mac, alpha[i], beta[i], p_d, t_tx_f);
            candidates[i] = candidate;
            phis[i] = phi;
            residual = residual.max((candidate - p_cs[i]).abs());
        }
        if residual < DELTA {
            return Ok(assemble(specs, &p_cs, &alpha, &beta, &phis, p_d, t_cap));
        }
        for i in 0..n {
            p_cs[i] = 0.5 * p_cs[i] + 0.5 * candidates[i];
        }
    }

    Err(Error::NonConvergence {
        iterations: MAX_OUTER_ITERATIONS,
        residual,
    })
}

fn assemble(
    specs: &[NodeChainSpec],
    p_cs: &[f64],
    alpha: &[f64],
    beta: &[f64],
    phis: &[f64],
    p_d: f64,
    t_cap: u32,
) -> Vec<SaturationParams> {
    let n = specs.len() as u32;
    (0..specs.len())
        .map(|i| {
            let spec = &specs[i];
            let p_c = collision_prob_hetero(p_cs, i);
            let p_c_eff = effective_collision(p_c, spec.theta);
            let p_cs_virtual = virtual_cs(p_c_eff, n);
            let kappa = goodput(alpha[i], beta[i], p_cs[i], p_cs_virtual, n);
            let (discard, drop) = if spec.mac.drop_enabled {
                (
                    p_discard(
                        phis[i],
                        p_c_eff,
                        spec.mac.max_backoff_stages,
                        spec.mac.max_retries,
                    ),
                    p_drop(p_c_eff, spec.mac.max_retries),
                )
            } else {
                (0.0, 0.0)
            };
            let phi_cap = mac_throughput(kappa, discard, drop, t_cap).unwrap_or(0.0);
            SaturationParams {
                alpha: alpha[i],
                beta: beta[i],
                p_cs: p_cs[i],
                p_c,
                p_c_eff,
                p_cs_virtual,
                kappa,
                p_discard: discard,
                p_drop: drop,
                phi_cap,
                phi: phis[i],
                p_d,
            }
        })
        .collect()
}

/// Optional CSV dump of saturation tables over `(n, t_cap, theta)` triples.
pub fn saturation_table_csv(
    rows: &[(u32, u32, f64)],
    t_tx: u32,
    mac: &MacParams,
) -> Result<String> {
    let mut out = String::from(
        "n,t_cap,theta,alpha,beta,p_cs,p_c,p_c_eff,p_cs_virtual,kappa,p_discard,p_drop,phi_cap\n",
    );
    for &(n, t_cap, theta) in rows {
        let p = solve_saturation(n, t_cap, t_tx, mac, theta)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            n,
            t_cap,
            theta,
            p.alpha,
            p.beta,
            p.p_cs,
            p.p_c,
            p.p_c_eff,
            p.p_cs_virtual,
            p.kappa,
            p.p_discard,
            p.p_drop,
            p.phi_cap
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn mac_with_drops() -> MacParams {
        MacParams {
            drop_enabled: true,
            ..MacParams::default_csma()
        }
    }

    #[test]
    fn effective_collision_arithmetic() {
        assert_relative_eq!(effective_collision(0.3, 0.1), 0.37, epsilon = 1e-12);
        assert_eq!(effective_collision(0.42, 0.0), 0.42);
        assert_eq!(effective_collision(0.42, 1.0), 1.0);
    }

    #[test]
    fn virtual_cs_examples() {
        assert_relative_eq!(virtual_cs(0.75, 3), 0.5, epsilon = 1e-12);
        assert_relative_eq!(virtual_cs(0.31, 2), 0.31, epsilon = 1e-12);
        assert_eq!(virtual_cs(0.0, 17), 0.0);
        assert_eq!(virtual_cs(0.9, 1), 0.0);
    }

    #[test]
    fn goodput_examples() {
        assert_relative_eq!(goodput(0.5, 0.5, 0.2, 0.0, 7), 0.05, epsilon = 1e-12);
        assert_eq!(goodput(0.0, 0.9, 0.2, 0.1, 5), 0.0);
        assert_relative_eq!(goodput(0.5, 0.5, 0.2, 0.1, 3), 0.0405, epsilon = 1e-12);
    }

    #[test]
    fn p_discard_edges() {
        assert_eq!(p_discard(0.0, 0.3, 4, 3), 0.0);
        assert_relative_eq!(p_discard(1.0, 0.0, 4, 3), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn p_discard_matches_branch_process_monte_carlo() {
        let (phi, p_c, m, w) = (0.5, 0.3, 4u32, 3u32);
        let expected = p_discard(phi, p_c, m, w);
        let trials = 1_000_000u32;
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let mut discards = 0u32;
        for _ in 0..trials {
            'packet: for _retry in 0..=w {
                for _stage in 0..=m {
                    if rng.random::<f64>() >= phi {
                        // Transmitted; collision decides between retry and exit.
                        if rng.random::<f64>() < p_c {
                            continue 'packet;
                        }
                        break 'packet;
                    }
                }
                discards += 1;
                break 'packet;
            }
        }
        let observed = discards as f64 / trials as f64;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (observed - expected).abs() <= 3.0 * sigma,
            "observed {observed}, expected {expected} +- {sigma:e}"
        );
    }

    #[test]
    fn p_drop_values() {
        assert_relative_eq!(p_drop(0.5, 3), 0.0625, epsilon = 1e-12);
        assert_eq!(p_drop(0.0, 9), 0.0);
        assert_eq!(p_drop(1.0, 4), 1.0);
    }

    #[test]
    fn mac_throughput_examples() {
        assert_relative_eq!(mac_throughput(0.02, 0.0, 0.0, 216).unwrap(), 4.32, epsilon = 1e-12);
        assert_relative_eq!(mac_throughput(0.01, 0.5, 0.0, 200).unwrap(), 4.0, epsilon = 1e-12);
        assert!(mac_throughput(0.01, 1.0, 0.0, 200).is_err());
        assert!(mac_throughput(0.01, 0.0, 1.0, 200).is_err());
        // Inverse identity: kappa round-trips through the normalization.
        let (kappa, pd, pr, t) = (0.013, 0.2, 0.05, 216u32);
        let phi_cap = mac_throughput(kappa, pd, pr, t).unwrap();
        assert_relative_eq!(
            phi_cap * (1.0 - pd) * (1.0 - pr) / t as f64,
            kappa,
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_node_has_no_collisions() {
        let mac = mac_with_drops();
        let p = solve_saturation(1, 384, 10, &mac, 0.0).unwrap();
        assert_eq!(p.p_c, 0.0);
        assert_eq!(p.p_drop, 0.0);
        assert_relative_eq!(p.alpha, 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.beta, 1.0, epsilon = 1e-9);
        // With no competitors the chain drains one packet per procedure:
        // counting (cw0 - 1)/2, then either the deferral detour or the two
        // assessments plus the transaction.
        let c0 = (mac.cw(0) as f64 - 1.0) / 2.0;
        let p_d = 10.0 / 384.0;
        let t_proc = c0 + p_d * ((10.0 + 2.0) / 2.0 + c0 + 2.0 + 10.0) + (1.0 - p_d) * (2.0 + 10.0);
        assert_relative_eq!(p.phi_cap, 384.0 / t_proc, max_relative = 1e-6);
        assert_relative_eq!(p.kappa * 384.0, p.phi_cap, max_relative = 1e-9);
    }

    #[test]
    fn full_outage_kills_the_channel() {
        let p = solve_saturation(5, 384, 10, &mac_with_drops(), 1.0).unwrap();
        assert_eq!(p.p_c_eff, 1.0);
        assert_eq!(p.p_drop, 1.0);
        assert_relative_eq!(p.kappa, 0.0, epsilon = 1e-12);
        assert_eq!(p.phi_cap, 0.0);
    }

    #[test]
    fn fixed_point_residual_is_tiny() {
        for (n, theta) in [(2u32, 0.0), (5, 0.0), (10, 0.1), (20, 0.2)] {
            let mac = mac_with_drops();
            let p = solve_saturation(n, 384, 10, &mac, theta).unwrap();
            let r = saturation_residual(&p, n, 384, 10, &mac, theta);
            assert!(r < 1e-8, "residual {r} at n={n}, theta={theta}");
        }
    }

    #[test]
    fn per_node_goodput_decreases_with_population() {
        let mac = mac_with_drops();
        let mut last = f64::INFINITY;
        for n in 2..=30 {
            let p = solve_saturation(n, 384, 10, &mac, 0.0).unwrap();
            let rate = p.kappa * 384.0;
            assert!(
                rate <= last + 1e-12,
                "per-node goodput rose from {last} to {rate} at n={n}"
            );
            last = rate;
        }
    }

    #[test]
    fn heterogeneous_identical_nodes_match_homogeneous() {
        for theta in [0.0, 0.1] {
            let mac = mac_with_drops();
            let homo = solve_saturation(6, 216, 10, &mac, theta).unwrap();
            let specs = vec![
                NodeChainSpec {
                    mac: mac.clone(),
                    theta
                };
                6
            ];
            let het = solve_heterogeneous(&specs, 216, 10).unwrap();
            for p in &het {
                assert_relative_eq!(p.alpha, homo.alpha, epsilon = 1e-9);
                assert_relative_eq!(p.beta, homo.beta, epsilon = 1e-9);
                assert_relative_eq!(p.p_cs, homo.p_cs, epsilon = 1e-9);
                assert_relative_eq!(p.p_c, homo.p_c, epsilon = 1e-9);
                assert_relative_eq!(p.kappa, homo.kappa, epsilon = 1e-9);
                assert_relative_eq!(p.phi_cap, homo.phi_cap, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn collision_prob_hetero_zero_competitors() {
        let p_cs = [0.3, 0.0, 0.0, 0.0];
        assert_eq!(collision_prob_hetero(&p_cs, 0), 0.0);
        assert_relative_eq!(collision_prob_hetero(&p_cs, 1), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn saturation_table_has_one_row_per_input() {
        let mac = mac_with_drops();
        let csv = saturation_table_csv(&[(5, 384, 0.0), (10, 384, 0.1)], 10, &mac).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("n,t_cap,theta"));
    }

    proptest! {
        #[test]
        fn solved_probabilities_stay_in_unit_interval(
            n in 1u32..25,
            theta in 0.0f64..=1.0,
            cw0 in 2u32..64,
            m in 0u32..6,
            w in 0u32..6,
            drops in proptest::bool::ANY,
        ) {
            let mac = MacParams::new(vec![cw0, cw0 * 2], m, w, drops).unwrap();
            let p = solve_saturation(n, 384, 10, &mac, theta).unwrap();
            for (name, v) in [
                ("alpha", p.alpha),
                ("beta", p.beta),
                ("p_cs", p.p_cs),
                ("p_c", p.p_c),
                ("p_c_eff", p.p_c_eff),
                ("p_cs_virtual", p.p_cs_virtual),
                ("p_discard", p.p_discard),
                ("p_drop", p.p_drop),
            ] {
                prop_assert!((0.0..=1.0).contains(&v), "{} = {} out of range", name, v);
            }
            prop_assert!(p.kappa >= 0.0);
            prop_assert!(p.phi_cap + 1e-12 >= p.kappa * 384.0);
        }
    }
}
