//! Deterministic discrete-event simulation of the star network at UBP
//! granularity.
//!
//! One run is a single sequential event loop owning all mutable state:
//! beaconed superframes, slotted CSMA/CA contention during the CAP (backoff
//! countdown, two clear-channel assessments, whole-transaction airtime),
//! TDMA slot grant/tenure/de-allocation during the CFP, outage and
//! hidden-node losses, and full per-node radio-state accounting. Identical
//! seeds produce bit-identical metrics.

pub mod metrics;

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::csma::fading::{FadingEnv, HiddenTopology};
use crate::error::{Error, Result};
use crate::mcca::{BufferLedger, MccaContext, ScheduleCache};
use crate::mdca::{MdpPolicy, SuperframePlan, policy_action};
use crate::traffic::{TrafficSpec, sample_arrivals};
use crate::types::{Action, MacParams, SuperframeConfig, UBP_SECONDS};

pub use metrics::{EnergyModel, NodeMetrics, ReplicationSummary, SimMetrics, Stat};

/// Channel-access scheme under test.
#[derive(Debug, Clone)]
pub enum Scheme {
    /// Distributed policy: each node maps its buffer level to an action.
    /// One policy is shared by all nodes; per-node policies (heterogeneous
    /// traffic) supply one per node.
    Mdca { policies: Vec<MdpPolicy> },
    /// Centralized scheduling from estimated buffers.
    Mcca { ctx: MccaContext },
    /// Legacy slotted CSMA/CA with backoff/retry drops enabled.
    Csma,
    /// Slotted CSMA/CA without drops.
    Csma2,
    /// Centralized longest-queue-first slot allocation, no sleep scheduling.
    Lqf,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Mdca { .. } => "mdca",
            Scheme::Mcca { .. } => "mcca",
            Scheme::Csma => "csma",
            Scheme::Csma2 => "csma2",
            Scheme::Lqf => "lqf",
        }
    }
}

/// Hidden-node realization: pairwise hidden probabilities, drawn either per
/// transmission attempt (default; shadowing varies over time) or once per
/// run (fixed topology).
#[derive(Debug, Clone)]
pub struct HiddenSpec {
    pub matrix: Vec<Vec<f64>>,
    pub per_attempt: bool,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SuperframeConfig,
    pub mac: MacParams,
    pub scheme: Scheme,
    /// Per-node traffic; ignored in saturation mode.
    pub traffic: Vec<TrafficSpec>,
    /// Per-node uplink outage probability.
    pub theta: Vec<f64>,
    pub hidden: Option<HiddenSpec>,
    pub b_max: u32,
    pub horizon: u64,
    pub seed: u64,
    pub energy: EnergyModel,
    /// Every node always has a packet; only meaningful for the CSMA schemes.
    pub saturation: bool,
    /// Per-node per-superframe beacon loss probability (a lost beacon makes
    /// the node sit the superframe out). Defaults to zero.
    pub beacon_loss: f64,
}

impl Scenario {
    /// Uniform-traffic scenario with default energy model and no fading.
    pub fn uniform(
        cfg: SuperframeConfig,
        mac: MacParams,
        scheme: Scheme,
        n: usize,
        traffic: TrafficSpec,
        horizon: u64,
        seed: u64,
    ) -> Self {
        Self {
            cfg,
            mac,
            scheme,
            traffic: vec![traffic; n],
            theta: vec![0.0; n],
            hidden: None,
            b_max: 5,
            horizon,
            seed,
            energy: EnergyModel::default(),
            saturation: false,
            beacon_loss: 0.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.traffic.len()
    }

    /// Derive per-node outage and the hidden matrix from radio geometry.
    pub fn apply_fading(&mut self, env: &FadingEnv, per_attempt: bool) -> Result<()> {
        if env.positions.len() != self.n_nodes() {
            return Err(Error::invalid("fading environment node count mismatch"));
        }
        let topo = HiddenTopology::from_env(env)?;
        self.theta = (0..self.n_nodes()).map(|i| topo.theta(i)).collect();
        let n = self.n_nodes();
        let matrix = (0..n)
            .map(|a| (0..n).map(|b| topo.hidden_prob(a, b)).collect())
            .collect();
        self.hidden = Some(HiddenSpec {
            matrix,
            per_attempt,
        });
        Ok(())
    }

    /// MAC parameters with the drop switch forced by the scheme: the plain
    /// CSMA baseline drops at the limits, its no-drop variant never does.
    pub fn effective_mac(&self) -> MacParams {
        let mut mac = self.mac.clone();
        match self.scheme {
            Scheme::Csma => mac.drop_enabled = true,
            Scheme::Csma2 => mac.drop_enabled = false,
            _ => {}
        }
        mac
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.mac.validate()?;
        self.energy.validate()?;
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::invalid("scenario needs at least one node"));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("horizon must be at least one superframe"));
        }
        if self.theta.len() != n {
            return Err(Error::invalid("theta must list one value per node"));
        }
        if self.theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("outage probabilities must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beacon_loss) {
            return Err(Error::invalid("beacon loss probability must be in [0, 1]"));
        }
        if let Some(h) = &self.hidden {
            if h.matrix.len() != n || h.matrix.iter().any(|r| r.len() != n) {
                return Err(Error::invalid("hidden matrix must be n x n"));
            }
            for (i, row) in h.matrix.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::invalid("hidden probabilities must be in [0, 1]"));
                    }
                    if i == j && p != 0.0 {
                        return Err(Error::invalid("hidden matrix diagonal must be zero"));
                    }
                }
            }
        }
        match &self.scheme {
            Scheme::Mdca { policies } => {
                if policies.len() != 1 && policies.len() != n {
                    return Err(Error::invalid(
                        "need one shared policy or one policy per node",
                    ));
                }
                for p in policies {
                    if p.action.len() != self.b_max as usize + 1 {
                        return Err(Error::invalid("policy table does not cover 0..=b_max"));
                    }
                }
            }
            Scheme::Mcca { ctx } => {
                if ctx.n_nodes() != n {
                    return Err(Error::invalid("scheduler context node count mismatch"));
                }
                if ctx.cfg != self.cfg || ctx.b_max != self.b_max {
                    return Err(Error::invalid(
                        "scheduler context disagrees with the scenario superframe or buffer",
                    ));
                }
            }
            _ => {}
        }
        if self.saturation && !matches!(self.scheme, Scheme::Csma | Scheme::Csma2) {
            return Err(Error::invalid(
                "saturation mode is defined for the CSMA schemes only",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Radio {
    Sleep,
    Idle,
    Rx,
    Tx,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    id: u64,
    gen_ubp: u64,
    retries: u32,
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Off,
    Counting { stage: u32, counter: u32 },
    Cca2 { stage: u32 },
    Tx,
}

/// Contention state carried across a superframe boundary for the same head
/// packet: a frozen countdown resumes, a deferred attempt redraws its
/// counter at the same stage.
#[derive(Debug, Clone, Copy)]
struct Frozen {
    packet_id: u64,
    stage: u32,
    counter: u32,
    redraw: bool,
}

struct NodeRt {
    buffer: VecDeque<Packet>,
    staged: Vec<Packet>,
    slot: Option<usize>,
    tenure: u32,
    plan: SuperframePlan,
    sat_out: bool,
    phase: Phase,
    cap_quota: u64,
    frozen: Option<Frozen>,
    cfp_tx_ubp: u64,
    next_pkt_id: u64,
    mac_rng: ChaCha12Rng,
    traffic_rng: ChaCha12Rng,
    m: NodeMetrics,
    // Per-superframe trace counters.
    sf_sent_cap: u32,
    sf_sent_cfp: u32,
    sf_collisions: u32,
    sf_energy_j: f64,
}

impl NodeRt {
    fn account(&mut self, state: Radio, ubp: u64, energy: &EnergyModel) {
        let (counter, watts) = match state {
            Radio::Sleep => (&mut self.m.ubp_sleep, energy.sleep_w),
            Radio::Idle => (&mut self.m.ubp_idle, energy.idle_w),
            Radio::Rx => (&mut self.m.ubp_rx, energy.rx_w),
            Radio::Tx => (&mut self.m.ubp_tx, energy.tx_w),
        };
        *counter += ubp;
        let joules = ubp as f64 * UBP_SECONDS * watts;
        self.m.energy_j += joules;
        self.sf_energy_j += joules;
    }

    fn head_id(&self) -> Option<u64> {
        self.buffer.front().map(|p| p.id)
    }
}

struct TxInFlight {
    node: usize,
    start: u64,
    end: u64,
    collided: bool,
    request_bit: bool,
    hidden_from: Vec<bool>,
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 over the pair; cheap and stable.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Engine<'s, 't> {
    sc: &'s Scenario,
    trace: Option<&'t mut (dyn Write + 't)>,
    mac: MacParams,
    nodes: Vec<NodeRt>,
    channel_rng: ChaCha12Rng,
    active_tx: Vec<TxInFlight>,
    slot_owner: Vec<Option<usize>>,
    pending_release: Vec<bool>,
    ledger: Option<BufferLedger>,
    schedule_cache: ScheduleCache,
    hidden_fixed: Option<Vec<Vec<bool>>>,
    coordinator_energy_j: f64,
    cca1_attempts: u64,
    cca1_busy: u64,
    cca2_attempts: u64,
    cca2_busy: u64,
    tx_attempts: u64,
    collided_tx: u64,
    inactive: Radio,
    // Timing constants in absolute UBP terms.
    interval: u64,
    t_beacon: u64,
    t_cap: u64,
    t_cfp: u64,
    t_slot: u64,
    t_tx: u64,
}

/// Run one scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimMetrics> {
    run_traced(scenario, None)
}

/// Run one scenario, optionally writing a per-superframe, per-node trace:
/// tab-separated `superframe node action sent_cap sent_cfp collisions
/// energy_j` lines under a documented header.
pub fn run_traced(scenario: &Scenario, trace: Option<&mut dyn Write>) -> Result<SimMetrics> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, trace);
    if let Some(w) = engine.trace.as_deref_mut() {
        writeln!(w, "superframe\tnode\taction\tsent_cap\tsent_cfp\tcollisions\tenergy_j")?;
    }
    for sf in 0..scenario.horizon {
        engine.superframe(sf)?;
    }
    engine.finish()
}

/// Run the same scenario under every seed and aggregate the headline
/// metrics.
pub fn run_replicated(scenario: &Scenario, seeds: &[u64]) -> Result<ReplicationSummary> {
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut sc = scenario.clone();
        sc.seed = seed;
        runs.push(run(&sc)?);
    }
    Ok(ReplicationSummary::from_runs(&runs))
}

impl<'s, 't> Engine<'s, 't> {
    fn new(sc: &'s Scenario, trace: Option<&'t mut (dyn Write + 't)>) -> Self {
        let n = sc.n_nodes();
        let mac = sc.effective_mac();
        let nodes = (0..n)
            .map(|i| NodeRt {
                buffer: VecDeque::new(),
                staged: Vec::new(),
                slot: None,
                tenure: 0,
                plan: SuperframePlan::idle(Action::Defer),
                sat_out: false,
                phase: Phase::Off,
                cap_quota: 0,
                frozen: None,
                cfp_tx_ubp: 0,
                next_pkt_id: 0,
                mac_rng: ChaCha12Rng::seed_from_u64(mix_seed(sc.seed, 0x6D61_6300 + i as u64)),
                traffic_rng: ChaCha12Rng::seed_from_u64(mix_seed(sc.seed, 0x7472_6600 + i as u64)),
                m: NodeMetrics::new(),
                sf_sent_cap: 0,
                sf_sent_cfp: 0,
                sf_collisions: 0,
                sf_energy_j: 0.0,
            })
            .collect();
        let mut channel_rng = ChaCha12Rng::seed_from_u64(mix_seed(sc.seed, 0x6368_616E));
        let hidden_fixed = sc.hidden.as_ref().and_then(|h| {
            if h.per_attempt {
                return None;
            }
            // One symmetric draw per unordered pair for the whole run.
            let mut real = vec![vec![false; n]; n];
            for a in 0..n {
                for b in (a + 1)..n {
                    let p = h.matrix[a][b];
                    let hidden = p > 0.0 && channel_rng.random::<f64>() < p;
                    real[a][b] = hidden;
                    real[b][a] = hidden;
                }
            }
            Some(real)
        });
        let ledger = match &sc.scheme {
            Scheme::Mcca { .. } | Scheme::Lqf => {
                let lambdas: Vec<f64> = sc
                    .traffic
                    .iter()
                    .map(|t| t.mean_packets(sc.cfg.interval()))
                    .collect();
                Some(BufferLedger::new(&lambdas, sc.b_max))
            }
            _ => None,
        };
        let inactive = match sc.scheme {
            Scheme::Lqf => Radio::Idle,
            _ => Radio::Sleep,
        };
        Self {
            sc,
            trace,
            mac,
            nodes,
            channel_rng,
            active_tx: Vec::new(),
            slot_owner: vec![None; sc.cfg.m as usize],
            pending_release: vec![false; sc.cfg.m as usize],
            ledger,
            schedule_cache: ScheduleCache::default(),
            hidden_fixed,
            coordinator_energy_j: 0.0,
            cca1_attempts: 0,
            cca1_busy: 0,
            cca2_attempts: 0,
            cca2_busy: 0,
            tx_attempts: 0,
            collided_tx: 0,
            inactive,
            interval: sc.cfg.interval() as u64,
            t_beacon: sc.cfg.t_beacon as u64,
            t_cap: sc.cfg.t_cap() as u64,
            t_cfp: sc.cfg.t_cfp() as u64,
            t_slot: sc.cfg.t_slot as u64,
            t_tx: sc.cfg.t_tx as u64,
        }
    }

    fn superframe(&mut self, sf: u64) -> Result<()> {
        let sf_start = sf * self.interval;
        let active_start = sf_start + self.t_beacon;
        let cap_end = active_start + self.t_cap;

        self.generate_arrivals(sf_start);
        self.beacon_phase();
        self.plan_superframe();
        self.cap_phase(active_start, cap_end);
        self.cfp_phase(cap_end);
        self.superframe_end(sf)
    }

    fn generate_arrivals(&mut self, sf_start: u64) {
        if self.sc.saturation {
            return;
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let spec = &self.sc.traffic[i];
            for batch in sample_arrivals(spec, self.sc.cfg.interval(), &mut node.traffic_rng) {
                for _ in 0..batch.size {
                    let id = node.next_pkt_id;
                    node.next_pkt_id += 1;
                    node.staged.push(Packet {
                        id,
                        gen_ubp: sf_start + batch.time_ubp,
                        retries: 0,
                    });
                    node.m.generated += 1;
                }
            }
        }
    }

    fn beacon_phase(&mut self) {
        let energy = self.sc.energy;
        self.coordinator_energy_j += self.t_beacon as f64 * UBP_SECONDS * energy.tx_w;
        // All nodes wake to listen for the beacon; the coordinator listens
        // for the rest of the active period.
        self.coordinator_energy_j += (self.t_cap + self.t_cfp) as f64 * UBP_SECONDS * energy.rx_w;
        let loss = self.sc.beacon_loss;
        for node in &mut self.nodes {
            node.account(Radio::Rx, self.t_beacon, &energy);
            node.sat_out = loss > 0.0 && self.channel_rng.random::<f64>() < loss;
        }
    }

    /// Compute every node's plan for this superframe and rebuild the slot
    /// map for the centralized schemes.
    fn plan_superframe(&mut self) {
        let eta = self.sc.cfg.eta;
        match &self.sc.scheme {
            Scheme::Mdca { policies } => {
                for i in 0..self.nodes.len() {
                    let policy = if policies.len() == 1 { &policies[0] } else { &policies[i] };
                    let node = &mut self.nodes[i];
                    let buffer = node.buffer.len() as u32;
                    node.plan = policy_action(policy, buffer, node.slot.is_some(), eta);
                }
            }
            Scheme::Csma | Scheme::Csma2 => {
                for node in &mut self.nodes {
                    let quota = if self.sc.saturation {
                        u32::MAX
                    } else {
                        node.buffer.len() as u32
                    };
                    node.plan = SuperframePlan {
                        cap_quota: quota,
                        ..SuperframePlan::idle(Action::Cap)
                    };
                }
            }
            Scheme::Mcca { ctx } => {
                let ledger = self.ledger.as_mut().expect("ledger exists for mcca");
                ledger.tick();
                let estimates = ledger.estimates_raw();
                let schedule = self.schedule_cache.get_or_compute(&estimates, ctx);
                self.slot_owner = vec![None; self.sc.cfg.m as usize];
                for (slot, &owner) in schedule.slots.iter().enumerate() {
                    self.slot_owner[slot] = Some(owner);
                }
                for (i, node) in self.nodes.iter_mut().enumerate() {
                    node.slot = schedule
                        .slots
                        .iter()
                        .position(|&owner| owner == i);
                    let b = node.buffer.len() as u32;
                    node.plan = match schedule.actions[i] {
                        Action::Defer => SuperframePlan::idle(Action::Defer),
                        Action::Cap => SuperframePlan {
                            cap_quota: b,
                            ..SuperframePlan::idle(Action::Cap)
                        },
                        Action::Cfp => SuperframePlan {
                            cfp_quota: eta.min(b),
                            ..SuperframePlan::idle(Action::Cfp)
                        },
                        Action::CapCfp => SuperframePlan {
                            cap_quota: b.saturating_sub(eta),
                            cfp_quota: eta.min(b),
                            ..SuperframePlan::idle(Action::CapCfp)
                        },
                    };
                }
            }
            Scheme::Lqf => {
                let ledger = self.ledger.as_mut().expect("ledger exists for lqf");
                ledger.tick();
                let estimates = ledger.estimates_raw();
                let mut order: Vec<usize> = (0..self.nodes.len()).collect();
                order.sort_by(|&a, &b| estimates[b].cmp(&estimates[a]).then(a.cmp(&b)));
                self.slot_owner = vec![None; self.sc.cfg.m as usize];
                let mut slot = 0usize;
                for &i in &order {
                    if slot >= self.slot_owner.len() || estimates[i] == 0 {
                        break;
                    }
                    self.slot_owner[slot] = Some(i);
                    self.nodes[i].slot = Some(slot);
                    slot += 1;
                }
                for i in 0..self.nodes.len() {
                    let holds = self.slot_owner.iter().flatten().any(|&o| o == i);
                    let node = &mut self.nodes[i];
                    if !holds {
                        node.slot = None;
                    }
                    let b = node.buffer.len() as u32;
                    node.plan = if holds {
                        SuperframePlan {
                            cap_quota: b.saturating_sub(eta),
                            cfp_quota: eta.min(b),
                            ..SuperframePlan::idle(Action::CapCfp)
                        }
                    } else {
                        SuperframePlan {
                            cap_quota: b,
                            ..SuperframePlan::idle(Action::Cap)
                        }
                    };
                }
            }
        }
    }

    /// Prepare contention state at CAP start; nodes with nothing to contend
    /// for are billed the whole CAP in their inactive state.
    fn cap_init(&mut self, active_start: u64) {
        let energy = self.sc.energy;
        let inactive = self.inactive;
        for i in 0..self.nodes.len() {
            let contend = !self.nodes[i].sat_out && self.nodes[i].plan.cap_quota > 0;
            if contend && self.sc.saturation {
                self.ensure_head_packet(i, active_start);
            }
            let node = &mut self.nodes[i];
            node.cap_quota = node.plan.cap_quota as u64;
            if !contend || node.buffer.is_empty() {
                node.phase = Phase::Off;
                node.account(inactive, self.t_cap, &energy);
                continue;
            }
            // Resume a frozen procedure only if it still belongs to the
            // packet at the head of the queue.
            let head = node.head_id().unwrap();
            let resume = node.frozen.take().filter(|f| f.packet_id == head);
            node.phase = match resume {
                Some(f) => {
                    let counter = if f.redraw {
                        node.mac_rng.random_range(0..self.mac.cw(f.stage))
                    } else {
                        f.counter
                    };
                    Phase::Counting {
                        stage: f.stage,
                        counter,
                    }
                }
                None => Phase::Counting {
                    stage: 0,
                    counter: node.mac_rng.random_range(0..self.mac.cw(0)),
                },
            };
        }
    }

    fn cap_phase(&mut self, active_start: u64, cap_end: u64) {
        self.cap_init(active_start);
        for u in active_start..cap_end {
            self.resolve_endings(u, cap_end);
            for i in 0..self.nodes.len() {
                self.cap_step(i, u, cap_end);
            }
        }
        self.resolve_endings(cap_end, cap_end);
        debug_assert!(self.active_tx.is_empty(), "transaction straddles CAP end");
        // Freeze survivors for the next CAP.
        for node in &mut self.nodes {
            if let Phase::Counting { stage, counter } = node.phase {
                node.frozen = node.head_id().map(|packet_id| Frozen {
                    packet_id,
                    stage,
                    counter,
                    redraw: false,
                });
            }
            node.phase = Phase::Off;
        }
    }

    fn cap_step(&mut self, i: usize, u: u64, cap_end: u64) {
        let energy = self.sc.energy;
        match self.nodes[i].phase {
            Phase::Off => {}
            Phase::Tx => self.nodes[i].account(Radio::Tx, 1, &energy),
            Phase::Counting { stage, counter } => {
                if counter > 0 {
                    self.nodes[i].account(Radio::Idle, 1, &energy);
                    self.nodes[i].phase = Phase::Counting {
                        stage,
                        counter: counter - 1,
                    };
                    return;
                }
                // Attempt point: both assessments plus the transaction must
                // fit in the remaining CAP, otherwise defer to the next one.
                if u + 2 + self.t_tx > cap_end {
                    let node = &mut self.nodes[i];
                    node.frozen = node.head_id().map(|packet_id| Frozen {
                        packet_id,
                        stage,
                        counter: 0,
                        redraw: true,
                    });
                    self.exit_cap(i, u, cap_end);
                    return;
                }
                self.cca1_attempts += 1;
                self.nodes[i].account(Radio::Rx, 1, &energy);
                if self.channel_busy(i, u) {
                    self.cca1_busy += 1;
                    self.advance_stage(i, stage, u, cap_end);
                } else {
                    self.nodes[i].phase = Phase::Cca2 { stage };
                }
            }
            Phase::Cca2 { stage } => {
                self.cca2_attempts += 1;
                self.nodes[i].account(Radio::Rx, 1, &energy);
                if self.channel_busy(i, u) {
                    self.cca2_busy += 1;
                    self.advance_stage(i, stage, u, cap_end);
                } else {
                    self.begin_transmission(i, u + 1);
                }
            }
        }
    }

    fn channel_busy(&self, listener: usize, u: u64) -> bool {
        self.active_tx
            .iter()
            .any(|t| t.start <= u && u < t.end && !t.hidden_from[listener])
    }

    fn begin_transmission(&mut self, i: usize, start: u64) {
        let n = self.nodes.len();
        let end = start + self.t_tx;
        let mut hidden_from = vec![false; n];
        if let Some(h) = &self.sc.hidden {
            for (j, slot) in hidden_from.iter_mut().enumerate() {
                if j == i {
                    continue;
                }
                *slot = match &self.hidden_fixed {
                    Some(real) => real[j][i],
                    None => {
                        let p = h.matrix[j][i];
                        p > 0.0 && self.channel_rng.random::<f64>() < p
                    }
                };
            }
        }
        let mut tx = TxInFlight {
            node: i,
            start,
            end,
            collided: false,
            request_bit: self.nodes[i].plan.set_request_bit,
            hidden_from,
        };
        // Binary collision model: any airtime overlap at the coordinator
        // corrupts every transmission involved.
        for other in &mut self.active_tx {
            if other.end > start {
                other.collided = true;
                tx.collided = true;
            }
        }
        self.tx_attempts += 1;
        self.active_tx.push(tx);
        self.nodes[i].phase = Phase::Tx;
    }

    fn resolve_endings(&mut self, u: u64, cap_end: u64) {
        if self.active_tx.is_empty() {
            return;
        }
        let mut ending: Vec<TxInFlight> = Vec::new();
        self.active_tx.retain_mut(|t| {
            if t.end == u {
                ending.push(TxInFlight {
                    node: t.node,
                    start: t.start,
                    end: t.end,
                    collided: t.collided,
                    request_bit: t.request_bit,
                    hidden_from: std::mem::take(&mut t.hidden_from),
                });
                false
            } else {
                true
            }
        });
        ending.sort_by_key(|t| t.node);
        for tx in ending {
            self.resolve_one(tx, u, cap_end);
        }
    }

    fn resolve_one(&mut self, tx: TxInFlight, u: u64, cap_end: u64) {
        let i = tx.node;
        let theta = self.sc.theta[i];
        let outage = theta > 0.0 && self.channel_rng.random::<f64>() < theta;
        let success = !tx.collided && !outage;
        if tx.collided {
            self.collided_tx += 1;
            self.nodes[i].m.collisions += 1;
            self.nodes[i].sf_collisions += 1;
        }
        if success {
            let packet = self.nodes[i].buffer.pop_front().expect("transmitted head");
            let delay = u - packet.gen_ubp;
            let nm = &mut self.nodes[i].m;
            nm.delivered += 1;
            nm.delivered_cap += 1;
            nm.delay_sum_ubp += delay as u128;
            nm.delay_min_ubp = nm.delay_min_ubp.min(delay);
            nm.delay_max_ubp = nm.delay_max_ubp.max(delay);
            self.nodes[i].sf_sent_cap += 1;
            self.nodes[i].cap_quota = self.nodes[i].cap_quota.saturating_sub(1);
            let remaining = self.nodes[i].buffer.len() as u32;
            if let Some(ledger) = self.ledger.as_mut() {
                ledger.report(i, remaining);
            }
            // First-come first-served slot grant, notified in the ack.
            if tx.request_bit && self.nodes[i].slot.is_none() {
                if let Some(free) = self.slot_owner.iter().position(|o| o.is_none()) {
                    self.slot_owner[free] = Some(i);
                    self.nodes[i].slot = Some(free);
                    self.nodes[i].tenure = 0;
                    if self.nodes[i].plan.halt_cap_on_grant {
                        self.exit_cap(i, u, cap_end);
                        return;
                    }
                }
            }
        } else {
            // No acknowledgment: collision and outage look identical to the
            // sender and trigger the retry path.
            let node = &mut self.nodes[i];
            let head = node.buffer.front_mut().expect("transmitted head");
            head.retries += 1;
            if self.mac.drop_enabled && head.retries > self.mac.max_retries {
                node.buffer.pop_front();
                node.m.dropped += 1;
                node.cap_quota = node.cap_quota.saturating_sub(1);
            }
        }
        self.continue_or_exit(i, u, cap_end);
    }

    /// After a departure point, either start a fresh procedure for the next
    /// head packet or leave the CAP.
    fn continue_or_exit(&mut self, i: usize, u: u64, cap_end: u64) {
        if self.sc.saturation {
            self.ensure_head_packet(i, u);
        }
        let node = &self.nodes[i];
        if node.cap_quota == 0 || node.buffer.is_empty() {
            self.exit_cap(i, u, cap_end);
            return;
        }
        let node = &mut self.nodes[i];
        node.phase = Phase::Counting {
            stage: 0,
            counter: node.mac_rng.random_range(0..self.mac.cw(0)),
        };
    }

    /// Busy assessment: advance the backoff stage, discarding the head
    /// packet once the stage limit is exhausted (when drops are enabled).
    fn advance_stage(&mut self, i: usize, stage: u32, u: u64, cap_end: u64) {
        let next = stage + 1;
        if self.mac.drop_enabled && next > self.mac.max_backoff_stages {
            let node = &mut self.nodes[i];
            node.buffer.pop_front();
            node.m.dropped += 1;
            node.cap_quota = node.cap_quota.saturating_sub(1);
            // The discard resolves at the next UBP boundary.
            if self.sc.saturation {
                self.ensure_head_packet(i, u + 1);
            }
            let node = &self.nodes[i];
            if node.cap_quota == 0 || node.buffer.is_empty() {
                self.exit_cap_from(i, u + 1, cap_end);
                return;
            }
            let node = &mut self.nodes[i];
            node.phase = Phase::Counting {
                stage: 0,
                counter: node.mac_rng.random_range(0..self.mac.cw(0)),
            };
            return;
        }
        // Without drops the stage keeps climbing while the window saturates
        // at the last schedule entry.
        let capped = next.min(self.mac.cw_schedule.len() as u32);
        let node = &mut self.nodes[i];
        node.phase = Phase::Counting {
            stage: capped,
            counter: node.mac_rng.random_range(0..self.mac.cw(capped)),
        };
    }

    /// Leave contention at `u`; the UBP at `u` itself has not been billed.
    fn exit_cap(&mut self, i: usize, u: u64, cap_end: u64) {
        self.exit_cap_from(i, u, cap_end);
    }

    fn exit_cap_from(&mut self, i: usize, from: u64, cap_end: u64) {
        let energy = self.sc.energy;
        let inactive = self.inactive;
        let node = &mut self.nodes[i];
        node.phase = Phase::Off;
        if from < cap_end {
            node.account(inactive, cap_end - from, &energy);
        }
    }

    fn ensure_head_packet(&mut self, i: usize, now: u64) {
        let node = &mut self.nodes[i];
        if node.buffer.is_empty() {
            let id = node.next_pkt_id;
            node.next_pkt_id += 1;
            node.buffer.push_back(Packet {
                id,
                gen_ubp: now,
                retries: 0,
            });
            node.m.generated += 1;
        }
    }

    fn cfp_phase(&mut self, cfp_start: u64) {
        let energy = self.sc.energy;
        for node in &mut self.nodes {
            node.cfp_tx_ubp = 0;
        }
        let slots = self.slot_owner.clone();
        for (slot_idx, owner) in slots.iter().enumerate() {
            let Some(i) = *owner else { continue };
            if self.nodes[i].sat_out {
                continue;
            }
            let slot_start = cfp_start + slot_idx as u64 * self.t_slot;
            if self.nodes[i].plan.send_dealloc_frame {
                // One minimal acknowledged frame carrying the de-allocation
                // bit; it can still be lost to outage.
                self.nodes[i].account(Radio::Tx, self.t_tx, &energy);
                self.nodes[i].cfp_tx_ubp += self.t_tx;
                let theta = self.sc.theta[i];
                let lost = theta > 0.0 && self.channel_rng.random::<f64>() < theta;
                if !lost {
                    self.pending_release[slot_idx] = true;
                }
                continue;
            }
            let capacity = (self.t_slot / self.t_tx) as u32;
            let quota = self.sc.cfg.eta.min(capacity);
            let mut attempts = 0u32;
            while attempts < quota && !self.nodes[i].buffer.is_empty() {
                attempts += 1;
                let theta = self.sc.theta[i];
                let outage = theta > 0.0 && self.channel_rng.random::<f64>() < theta;
                if !outage {
                    let packet = self.nodes[i].buffer.pop_front().unwrap();
                    let done = slot_start + attempts as u64 * self.t_tx;
                    let delay = done - packet.gen_ubp;
                    let nm = &mut self.nodes[i].m;
                    nm.delivered += 1;
                    nm.delivered_cfp += 1;
                    nm.delay_sum_ubp += delay as u128;
                    nm.delay_min_ubp = nm.delay_min_ubp.min(delay);
                    nm.delay_max_ubp = nm.delay_max_ubp.max(delay);
                    self.nodes[i].sf_sent_cfp += 1;
                    let remaining = self.nodes[i].buffer.len() as u32;
                    if let Some(ledger) = self.ledger.as_mut() {
                        ledger.report(i, remaining);
                    }
                } else {
                    let node = &mut self.nodes[i];
                    let head = node.buffer.front_mut().unwrap();
                    head.retries += 1;
                    if self.mac.drop_enabled && head.retries > self.mac.max_retries {
                        node.buffer.pop_front();
                        node.m.dropped += 1;
                    }
                }
            }
            self.nodes[i].account(Radio::Tx, attempts as u64 * self.t_tx, &energy);
            self.nodes[i].cfp_tx_ubp += attempts as u64 * self.t_tx;
        }
        // Bill the rest of the CFP in the inactive state.
        let inactive = self.inactive;
        for node in &mut self.nodes {
            let remaining = self.t_cfp - node.cfp_tx_ubp;
            if remaining > 0 {
                node.account(inactive, remaining, &energy);
            }
        }
    }

    fn superframe_end(&mut self, sf: u64) -> Result<()> {
        // Slot bookkeeping is persistent only for the distributed scheme;
        // the centralized schemes rebuild the map from each beacon.
        if matches!(self.sc.scheme, Scheme::Mdca { .. }) {
            for slot_idx in 0..self.slot_owner.len() {
                let Some(owner) = self.slot_owner[slot_idx] else {
                    continue;
                };
                self.nodes[owner].tenure += 1;
                let evict = self.nodes[owner].tenure >= self.sc.cfg.rho;
                if evict || self.pending_release[slot_idx] {
                    self.slot_owner[slot_idx] = None;
                    self.nodes[owner].slot = None;
                    self.nodes[owner].tenure = 0;
                }
            }
        }
        self.pending_release.iter_mut().for_each(|p| *p = false);

        // Arrivals become visible now; late overflow is discarded.
        for node in &mut self.nodes {
            for p in node.staged.drain(..) {
                node.buffer.push_back(p);
            }
            if !self.sc.saturation {
                while node.buffer.len() > self.sc.b_max as usize {
                    node.buffer.pop_back();
                    node.m.discarded += 1;
                }
            }
        }

        if let Some(w) = self.trace.as_deref_mut() {
            for (i, node) in self.nodes.iter_mut().enumerate() {
                writeln!(
                    w,
                    "{sf}\t{i}\t{}\t{}\t{}\t{}\t{:.9e}",
                    node.plan.action.code(),
                    node.sf_sent_cap,
                    node.sf_sent_cfp,
                    node.sf_collisions,
                    node.sf_energy_j
                )?;
                node.sf_sent_cap = 0;
                node.sf_sent_cfp = 0;
                node.sf_collisions = 0;
                node.sf_energy_j = 0.0;
            }
        } else {
            for node in &mut self.nodes {
                node.sf_sent_cap = 0;
                node.sf_sent_cfp = 0;
                node.sf_collisions = 0;
                node.sf_energy_j = 0.0;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<SimMetrics> {
        let expected_ubp = self.sc.horizon * self.interval;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            node.m.in_buffer_at_end = node.buffer.len() as u64;
            assert_eq!(
                node.m.ubp_total(),
                expected_ubp,
                "node {i} radio timeline does not cover the horizon"
            );
            assert_eq!(
                node.m.generated,
                node.m.delivered + node.m.discarded + node.m.dropped + node.m.in_buffer_at_end,
                "node {i} packet conservation violated"
            );
        }
        let metrics = SimMetrics::aggregate(
            self.nodes.into_iter().map(|n| n.m).collect(),
            self.coordinator_energy_j,
            self.cca1_attempts,
            self.cca1_busy,
            self.cca2_attempts,
            self.cca2_busy,
            self.tx_attempts,
            self.collided_tx,
            self.sc.horizon,
        );
        debug_assert!(metrics.conservation_holds());
        Ok(metrics)
    }
}
