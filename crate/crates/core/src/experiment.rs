//! Batch experiment driver: plan configs, policy caching, parameter sweeps,
//! and plot-ready CSV output.
//!
//! Plans are described in a line-oriented config: `[section]` headers,
//! `key = value` lines, `#` comments, comma-separated lists. Sections are
//! `network`, `mac`, `traffic`, `scheme`, `sweep`, and `output`; unset keys
//! fall back to the default star-network profile.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mcca::MccaContext;
use crate::mdca::{MdcaContext, MdpPolicy, value_iteration};
use crate::sim::{ReplicationSummary, Scenario, Scheme, SimMetrics, Stat, run};
use crate::traffic::{BatchPmf, TrafficSpec};
use crate::types::{Action, MacParams, SuperframeConfig, lambda_for_offered_traffic};

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Dimensionless offered traffic G.
    OfferedTraffic,
    /// CFP length in slots.
    CfpSlots,
    /// Network size.
    Nodes,
    /// Uniform channel outage probability.
    Theta,
    /// Scale factor on the three-group heterogeneous rate profile.
    HeteroRate,
}

impl SweepAxis {
    pub fn key(&self) -> &'static str {
        match self {
            SweepAxis::OfferedTraffic => "offered_traffic",
            SweepAxis::CfpSlots => "m",
            SweepAxis::Nodes => "n",
            SweepAxis::Theta => "theta",
            SweepAxis::HeteroRate => "hetero",
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        match key {
            "offered_traffic" => Some(SweepAxis::OfferedTraffic),
            "m" => Some(SweepAxis::CfpSlots),
            "n" => Some(SweepAxis::Nodes),
            "theta" => Some(SweepAxis::Theta),
            "hetero" => Some(SweepAxis::HeteroRate),
            _ => None,
        }
    }
}

/// Scheme selector in a plan; materialized into a [`Scheme`] per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Mdca,
    Mcca,
    Csma,
    Csma2,
    Lqf,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Mdca => "mdca",
            SchemeKind::Mcca => "mcca",
            SchemeKind::Csma => "csma",
            SchemeKind::Csma2 => "csma2",
            SchemeKind::Lqf => "lqf",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "mdca" => Some(SchemeKind::Mdca),
            "mcca" => Some(SchemeKind::Mcca),
            "csma" => Some(SchemeKind::Csma),
            "csma2" => Some(SchemeKind::Csma2),
            "lqf" => Some(SchemeKind::Lqf),
            _ => None,
        }
    }
}

/// Heterogeneous-traffic rate shares for the low/medium/high groups.
pub const HETERO_SHARES: [f64; 3] = [0.15, 0.30, 0.55];
pub const HETERO_GROUPS: [&str; 3] = ["low", "medium", "high"];

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub cfg: SuperframeConfig,
    pub mac: MacParams,
    pub n: u32,
    pub b_max: u32,
    /// Base offered traffic when it is not the sweep axis.
    pub offered_traffic: f64,
    pub batch: Vec<(u32, f64)>,
    pub schemes: Vec<SchemeKind>,
    pub gamma: f64,
    pub theta: f64,
    pub beacon_loss: f64,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub replications: u32,
    pub seed: u64,
    pub horizon: u64,
    pub output: String,
}

impl Default for ExperimentPlan {
    /// Default star-network profile: 20 nodes, 16 slots with a 7-slot CFP,
    /// 5000-superframe horizon.
    fn default() -> Self {
        Self {
            cfg: SuperframeConfig::default_star(),
            mac: MacParams::default_csma(),
            n: 20,
            b_max: 5,
            offered_traffic: 0.5,
            batch: vec![(1, 1.0)],
            schemes: vec![SchemeKind::Csma2],
            gamma: 0.9,
            theta: 0.0,
            beacon_loss: 0.0,
            axis: SweepAxis::OfferedTraffic,
            values: vec![0.5],
            replications: 1,
            seed: 1,
            horizon: 5000,
            output: "results.csv".to_string(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{value}` for key `{key}`"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse_num(line, key, v))
        .collect()
}

/// Parse a plan config, rejecting unknown sections and keys with their line
/// number, then validate the semantic invariants.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::default();
    let mut explicit_values = false;
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.split('#').next().unwrap_or("").trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(Error::Parse {
                line,
                message: "unterminated section header".into(),
            })?;
            match name {
                "network" | "mac" | "traffic" | "scheme" | "sweep" | "output" => {
                    section = name.to_string();
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown section `{other}`"),
                    });
                }
            }
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(Error::Parse {
            line,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match (section.as_str(), key) {
            ("network", "n") => plan.n = parse_num(line, key, value)?,
            ("network", "k") => plan.cfg.k = parse_num(line, key, value)?,
            ("network", "m") => plan.cfg.m = parse_num(line, key, value)?,
            ("network", "t_slot") => plan.cfg.t_slot = parse_num(line, key, value)?,
            ("network", "t_beacon") => plan.cfg.t_beacon = parse_num(line, key, value)?,
            ("network", "eta") => plan.cfg.eta = parse_num(line, key, value)?,
            ("network", "rho") => plan.cfg.rho = parse_num(line, key, value)?,
            ("network", "t_tx") => plan.cfg.t_tx = parse_num(line, key, value)?,
            ("network", "b_max") => plan.b_max = parse_num(line, key, value)?,
            ("mac", "cw") => plan.mac.cw_schedule = parse_list(line, key, value)?,
            ("mac", "max_backoffs") => plan.mac.max_backoff_stages = parse_num(line, key, value)?,
            ("mac", "max_retries") => plan.mac.max_retries = parse_num(line, key, value)?,
            ("mac", "drops") => plan.mac.drop_enabled = parse_num(line, key, value)?,
            ("traffic", "offered_traffic") => plan.offered_traffic = parse_num(line, key, value)?,
            ("traffic", "lambda_per_superframe") => {
                let lambda: f64 = parse_num(line, key, value)?;
                plan.offered_traffic =
                    crate::types::offered_traffic(plan.n, lambda, &plan.cfg);
            }
            ("traffic", "batch") => {
                let mut batch = Vec::new();
                for pair in value.split(',').filter(|v| !v.trim().is_empty()) {
                    let (z, p) = pair.trim().split_once(':').ok_or(Error::Parse {
                        line,
                        message: format!("batch entry `{pair}` is not size:prob"),
                    })?;
                    batch.push((parse_num(line, key, z)?, parse_num(line, key, p)?));
                }
                plan.batch = batch;
            }
            ("scheme", "schemes") | ("scheme", "scheme") => {
                let mut schemes = Vec::new();
                for name in value.split(',').filter(|v| !v.trim().is_empty()) {
                    let name = name.trim().to_ascii_lowercase();
                    schemes.push(SchemeKind::from_name(&name).ok_or(Error::Parse {
                        line,
                        message: format!("unknown scheme `{name}`"),
                    })?);
                }
                plan.schemes = schemes;
            }
            ("scheme", "gamma") => plan.gamma = parse_num(line, key, value)?,
            ("scheme", "theta") => plan.theta = parse_num(line, key, value)?,
            ("scheme", "beacon_loss") => plan.beacon_loss = parse_num(line, key, value)?,
            ("sweep", "axis") => {
                plan.axis = SweepAxis::from_key(value).ok_or(Error::Parse {
                    line,
                    message: format!("unknown sweep axis `{value}`"),
                })?;
            }
            ("sweep", "values") => {
                plan.values = parse_list(line, key, value)?;
                explicit_values = true;
            }
            ("sweep", "replications") => plan.replications = parse_num(line, key, value)?,
            ("sweep", "seed") => plan.seed = parse_num(line, key, value)?,
            ("sweep", "horizon") => plan.horizon = parse_num(line, key, value)?,
            ("output", "path") => plan.output = value.to_string(),
            ("", _) => {
                return Err(Error::Parse {
                    line,
                    message: format!("key `{key}` appears before any [section]"),
                });
            }
            (_, _) => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}` in section [{section}]"),
                });
            }
        }
    }
    if !explicit_values {
        plan.values = vec![match plan.axis {
            SweepAxis::OfferedTraffic => plan.offered_traffic,
            SweepAxis::CfpSlots => plan.cfg.m as f64,
            SweepAxis::Nodes => plan.n as f64,
            SweepAxis::Theta => plan.theta,
            SweepAxis::HeteroRate => 1.0,
        }];
    }
    validate_plan(&plan)?;
    Ok(plan)
}

fn validate_plan(plan: &ExperimentPlan) -> Result<()> {
    plan.cfg
        .validate()
        .map_err(|e| Error::semantic("network", e))?;
    plan.mac.validate().map_err(|e| Error::semantic("mac", e))?;
    BatchPmf::new(&plan.batch).map_err(|e| Error::semantic("traffic.batch", e))?;
    if plan.n == 0 {
        return Err(Error::semantic("network.n", "need at least one node"));
    }
    if plan.schemes.is_empty() {
        return Err(Error::semantic("scheme.schemes", "no schemes listed"));
    }
    if plan.values.is_empty() {
        return Err(Error::semantic("sweep.values", "axis values are empty"));
    }
    if plan.replications == 0 {
        return Err(Error::semantic("sweep.replications", "need at least one"));
    }
    if plan.horizon == 0 {
        return Err(Error::semantic("sweep.horizon", "need at least one superframe"));
    }
    if !(0.0..1.0).contains(&plan.gamma) {
        return Err(Error::semantic("scheme.gamma", "discount must be in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&plan.theta) {
        return Err(Error::semantic("scheme.theta", "outage must be in [0, 1]"));
    }
    for &v in &plan.values {
        let ok = match plan.axis {
            SweepAxis::OfferedTraffic | SweepAxis::HeteroRate => v >= 0.0,
            SweepAxis::CfpSlots => v >= 0.0 && v.fract() == 0.0 && (v as u32) <= plan.cfg.k,
            SweepAxis::Nodes => v >= 1.0 && v.fract() == 0.0,
            SweepAxis::Theta => (0.0..=1.0).contains(&v),
        };
        if !ok {
            return Err(Error::semantic(
                "sweep.values",
                format!("value {v} is not valid for axis {}", plan.axis.key()),
            ));
        }
    }
    Ok(())
}

/// Canonical text form; `parse_plan(serialize_plan(p)) == p`.
pub fn serialize_plan(plan: &ExperimentPlan) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[network]");
    let _ = writeln!(s, "n = {}", plan.n);
    let _ = writeln!(s, "k = {}", plan.cfg.k);
    let _ = writeln!(s, "m = {}", plan.cfg.m);
    let _ = writeln!(s, "t_slot = {}", plan.cfg.t_slot);
    let _ = writeln!(s, "t_beacon = {}", plan.cfg.t_beacon);
    let _ = writeln!(s, "eta = {}", plan.cfg.eta);
    let _ = writeln!(s, "rho = {}", plan.cfg.rho);
    let _ = writeln!(s, "t_tx = {}", plan.cfg.t_tx);
    let _ = writeln!(s, "b_max = {}", plan.b_max);
    let _ = writeln!(s, "[mac]");
    let cw: Vec<String> = plan.mac.cw_schedule.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(s, "cw = {}", cw.join(","));
    let _ = writeln!(s, "max_backoffs = {}", plan.mac.max_backoff_stages);
    let _ = writeln!(s, "max_retries = {}", plan.mac.max_retries);
    let _ = writeln!(s, "drops = {}", plan.mac.drop_enabled);
    let _ = writeln!(s, "[traffic]");
    let _ = writeln!(s, "offered_traffic = {}", plan.offered_traffic);
    let batch: Vec<String> = plan.batch.iter().map(|(z, p)| format!("{z}:{p}")).collect();
    let _ = writeln!(s, "batch = {}", batch.join(","));
    let _ = writeln!(s, "[scheme]");
    let schemes: Vec<&str> = plan.schemes.iter().map(|k| k.name()).collect();
    let _ = writeln!(s, "schemes = {}", schemes.join(","));
    let _ = writeln!(s, "gamma = {}", plan.gamma);
    let _ = writeln!(s, "theta = {}", plan.theta);
    let _ = writeln!(s, "beacon_loss = {}", plan.beacon_loss);
    let _ = writeln!(s, "[sweep]");
    let _ = writeln!(s, "axis = {}", plan.axis.key());
    let values: Vec<String> = plan.values.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "values = {}", values.join(","));
    let _ = writeln!(s, "replications = {}", plan.replications);
    let _ = writeln!(s, "seed = {}", plan.seed);
    let _ = writeln!(s, "horizon = {}", plan.horizon);
    let _ = writeln!(s, "[output]");
    let _ = writeln!(s, "path = {}", plan.output);
    s
}

/// Offline policy store keyed by `(n, k, m, lambda)`; the rate is keyed by
/// its exact bit pattern.
#[derive(Debug, Default)]
pub struct PolicyCache {
    entries: BTreeMap<(u32, u32, u32, u64), MdpPolicy>,
    /// Number of value-iteration solves performed (cache-miss counter).
    pub solver_invocations: usize,
}

impl PolicyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, n: u32, k: u32, m: u32, lambda_per_sf: f64) -> bool {
        self.entries
            .contains_key(&(n, k, m, lambda_per_sf.to_bits()))
    }

    /// Fetch or solve a policy for `n` nodes under `cfg` with the given
    /// per-node rate.
    #[allow(clippy::too_many_arguments)]
    pub fn get_or_solve(
        &mut self,
        n: u32,
        cfg: &SuperframeConfig,
        mac: &MacParams,
        lambda_per_sf: f64,
        batch: &BatchPmf,
        theta: f64,
        b_max: u32,
        gamma: f64,
        xi_x: f64,
        xi_c: f64,
    ) -> Result<MdpPolicy> {
        let key = (n, cfg.k, cfg.m, lambda_per_sf.to_bits());
        if let Some(policy) = self.entries.get(&key) {
            return Ok(policy.clone());
        }
        let traffic = TrafficSpec::per_interval(lambda_per_sf, cfg.interval(), batch.clone())?;
        let ctx = MdcaContext::new(*cfg, mac.clone(), n, &traffic, theta, b_max, gamma, xi_x, xi_c)?;
        let policy = value_iteration(&ctx, 1e-6)?;
        self.solver_invocations += 1;
        self.entries.insert(key, policy.clone());
        Ok(policy)
    }

    /// Plain-text table: one `n k m lambda actions` row per policy, ordered
    /// by key.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# n\tk\tm\tlambda\tactions\n");
        for (&(n, k, m, bits), policy) in &self.entries {
            let actions: Vec<&str> = policy.action.iter().map(|a| a.code()).collect();
            let _ = writeln!(s, "{n}\t{k}\t{m}\t{}\t{}", f64::from_bits(bits), actions.join(","));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cache = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line,
                    message: "expected `n k m lambda actions`".into(),
                });
            }
            let n = parse_num(line, "n", fields[0])?;
            let k = parse_num(line, "k", fields[1])?;
            let m = parse_num(line, "m", fields[2])?;
            let lambda: f64 = parse_num(line, "lambda", fields[3])?;
            let action = fields[4]
                .split(',')
                .map(Action::from_code)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            let len = action.len();
            cache.entries.insert(
                (n, k, m, lambda.to_bits()),
                MdpPolicy {
                    value: vec![0.0; len],
                    action,
                    iterations: 0,
                    final_residual: 0.0,
                    residuals: Vec::new(),
                },
            );
        }
        Ok(cache)
    }
}

/// Per-node rates for one axis value, plus group labels for the
/// heterogeneous axis.
fn rates_for(plan: &ExperimentPlan, value: f64) -> (u32, SuperframeConfig, Vec<f64>, Vec<usize>) {
    let mut cfg = plan.cfg;
    let mut n = plan.n;
    match plan.axis {
        SweepAxis::OfferedTraffic => {
            let lambda = lambda_for_offered_traffic(n, value, &cfg);
            (n, cfg, vec![lambda; n as usize], vec![0; n as usize])
        }
        SweepAxis::CfpSlots => {
            cfg.m = value as u32;
            let lambda = lambda_for_offered_traffic(n, plan.offered_traffic, &cfg);
            (n, cfg, vec![lambda; n as usize], vec![0; n as usize])
        }
        SweepAxis::Nodes => {
            n = value as u32;
            // Congestion-preserving rate: each node offers an equal share of
            // one transaction per interval slot of airtime.
            let lambda = cfg.interval() as f64 / (cfg.t_tx as f64 * n as f64);
            (n, cfg, vec![lambda; n as usize], vec![0; n as usize])
        }
        SweepAxis::Theta => {
            let lambda = lambda_for_offered_traffic(n, plan.offered_traffic, &cfg);
            (n, cfg, vec![lambda; n as usize], vec![0; n as usize])
        }
        SweepAxis::HeteroRate => {
            let group_size = (n / 3).max(1);
            let base = cfg.interval() as f64 / (group_size as f64 * cfg.t_tx as f64);
            let mut rates = Vec::with_capacity(n as usize);
            let mut groups = Vec::with_capacity(n as usize);
            for i in 0..n {
                let g = ((i / group_size) as usize).min(2);
                rates.push(HETERO_SHARES[g] * value * base);
                groups.push(g);
            }
            (n, cfg, rates, groups)
        }
    }
}

/// Build one runnable scenario. The CSMA baselines run with no CFP, the way
/// a legacy contention-only MAC would.
#[allow(clippy::too_many_arguments)]
fn build_scenario(
    plan: &ExperimentPlan,
    kind: SchemeKind,
    value: f64,
    cache: &mut PolicyCache,
) -> Result<(Scenario, Vec<usize>)> {
    let (n, mut cfg, rates, groups) = rates_for(plan, value);
    if matches!(kind, SchemeKind::Csma | SchemeKind::Csma2) {
        cfg.m = 0;
    }
    let batch = BatchPmf::new(&plan.batch)?;
    let theta = if plan.axis == SweepAxis::Theta { value } else { plan.theta };
    let energy = crate::sim::EnergyModel::default();

    let scheme = match kind {
        SchemeKind::Csma => Scheme::Csma,
        SchemeKind::Csma2 => Scheme::Csma2,
        SchemeKind::Lqf => Scheme::Lqf,
        SchemeKind::Mdca => {
            let mut policies = Vec::with_capacity(n as usize);
            for &lambda in &rates {
                policies.push(cache.get_or_solve(
                    n,
                    &cfg,
                    &plan.mac,
                    lambda,
                    &batch,
                    theta,
                    plan.b_max,
                    plan.gamma,
                    energy.xi_x,
                    energy.xi_c,
                )?);
            }
            Scheme::Mdca { policies }
        }
        SchemeKind::Mcca => {
            let lambdas: Vec<f64> = rates
                .iter()
                .map(|&l| l * batch.mean())
                .collect();
            Scheme::Mcca {
                ctx: MccaContext::new(
                    cfg,
                    plan.mac.clone(),
                    theta,
                    plan.b_max,
                    energy.xi_x,
                    energy.xi_c,
                    lambdas,
                )?,
            }
        }
    };

    let traffic = rates
        .iter()
        .map(|&l| TrafficSpec::per_interval(l, cfg.interval(), batch.clone()))
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario {
        cfg,
        mac: plan.mac.clone(),
        scheme,
        traffic,
        theta: vec![theta; n as usize],
        hidden: None,
        b_max: plan.b_max,
        horizon: plan.horizon,
        seed: plan.seed,
        energy,
        saturation: false,
        beacon_loss: plan.beacon_loss,
    };
    Ok((scenario, groups))
}

/// Pre-solve every policy the sweep will need, so simulation runs start from
/// a warm cache.
pub fn solve_and_cache_policies(plan: &ExperimentPlan, cache: &mut PolicyCache) -> Result<()> {
    if !plan.schemes.contains(&SchemeKind::Mdca) {
        return Ok(());
    }
    let batch = BatchPmf::new(&plan.batch)?;
    let energy = crate::sim::EnergyModel::default();
    for &value in &plan.values {
        let (n, cfg, rates, _) = rates_for(plan, value);
        let theta = if plan.axis == SweepAxis::Theta { value } else { plan.theta };
        for &lambda in &rates {
            cache.get_or_solve(
                n,
                &cfg,
                &plan.mac,
                lambda,
                &batch,
                theta,
                plan.b_max,
                plan.gamma,
                energy.xi_x,
                energy.xi_c,
            )?;
        }
    }
    Ok(())
}

/// One output row: a `(axis value, scheme, group)` aggregate across seeds.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub axis_value: f64,
    pub scheme: SchemeKind,
    pub group: String,
    pub replications: u32,
    pub pdr: Stat,
    pub delay_ubp: Stat,
    pub energy_per_packet: Stat,
}

const CSV_HEADER: &str = "axis,scheme,group,pdr_mean,pdr_min,pdr_max,\
delay_mean_ubp,delay_min_ubp,delay_max_ubp,delay_mean_ms,delay_min_ms,delay_max_ms,\
energy_per_packet_mean_j,energy_per_packet_min_j,energy_per_packet_max_j,replications";

/// Execute the plan: every `(axis value, scheme)` cell runs once per seed,
/// and each cell becomes one CSV row (plus per-group rows under the
/// heterogeneous axis). Rerunning an identical plan reproduces the CSV
/// byte for byte.
pub fn execute(plan: &ExperimentPlan, cache: &mut PolicyCache) -> Result<String> {
    let rows = execute_rows(plan, cache)?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        let ms = |ubp: f64| ubp * crate::types::UBP_SECONDS * 1e3;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.axis_value,
            row.scheme.name(),
            row.group,
            row.pdr.mean,
            row.pdr.min,
            row.pdr.max,
            row.delay_ubp.mean,
            row.delay_ubp.min,
            row.delay_ubp.max,
            ms(row.delay_ubp.mean),
            ms(row.delay_ubp.min),
            ms(row.delay_ubp.max),
            row.energy_per_packet.mean,
            row.energy_per_packet.min,
            row.energy_per_packet.max,
            row.replications,
        );
    }
    Ok(csv)
}

/// Structured form of [`execute`].
pub fn execute_rows(plan: &ExperimentPlan, cache: &mut PolicyCache) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for &value in &plan.values {
        for &kind in &plan.schemes {
            let (template, groups) = build_scenario(plan, kind, value, cache)?;
            let mut runs = Vec::with_capacity(plan.replications as usize);
            for rep in 0..plan.replications {
                let mut scenario = template.clone();
                scenario.seed = plan.seed.wrapping_add(rep as u64);
                let metrics = run(&scenario).map_err(|e| Error::Run {
                    axis: format!("{}={value}", plan.axis.key()),
                    scheme: kind.name().to_string(),
                    seed: scenario.seed,
                    source: Box::new(e),
                })?;
                runs.push(metrics);
            }
            rows.push(row_from_runs(value, kind, "all", &runs, None));
            if plan.axis == SweepAxis::HeteroRate {
                for (g, name) in HETERO_GROUPS.iter().enumerate() {
                    let members: Vec<usize> = groups
                        .iter()
                        .enumerate()
                        .filter(|&(_, &grp)| grp == g)
                        .map(|(i, _)| i)
                        .collect();
                    if !members.is_empty() {
                        rows.push(row_from_runs(value, kind, name, &runs, Some(&members)));
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn row_from_runs(
    axis_value: f64,
    scheme: SchemeKind,
    group: &str,
    runs: &[SimMetrics],
    members: Option<&[usize]>,
) -> ExperimentRow {
    let mut pdr = Vec::new();
    let mut delay = Vec::new();
    let mut energy = Vec::new();
    for m in runs {
        match members {
            None => {
                pdr.push(m.pdr);
                delay.push(m.delay_mean_ubp);
                energy.push(m.energy_per_delivered_j);
            }
            Some(idx) => {
                // Group rows aggregate member nodes only; the coordinator's
                // energy stays in the network-wide row.
                let generated: u64 = idx.iter().map(|&i| m.nodes[i].generated).sum();
                let delivered: u64 = idx.iter().map(|&i| m.nodes[i].delivered).sum();
                let delay_sum: u128 = idx.iter().map(|&i| m.nodes[i].delay_sum_ubp).sum();
                let energy_j: f64 = idx.iter().map(|&i| m.nodes[i].energy_j).sum();
                pdr.push(delivered as f64 / generated as f64);
                delay.push(delay_sum as f64 / delivered as f64);
                energy.push(energy_j / delivered as f64);
            }
        }
    }
    ExperimentRow {
        axis_value,
        scheme,
        group: group.to_string(),
        replications: runs.len() as u32,
        pdr: Stat::from_values(&pdr),
        delay_ubp: Stat::from_values(&delay),
        energy_per_packet: Stat::from_values(&energy),
    }
}

/// Convenience: run one scenario built from the plan base (first scheme,
/// first axis value) under the plan seed, returning the replication summary
/// over `replications` consecutive seeds.
pub fn run_base_summary(plan: &ExperimentPlan, cache: &mut PolicyCache) -> Result<ReplicationSummary> {
    let kind = plan.schemes[0];
    let value = plan.values[0];
    let (scenario, _) = build_scenario(plan, kind, value, cache)?;
    let seeds: Vec<u64> = (0..plan.replications as u64)
        .map(|r| plan.seed.wrapping_add(r))
        .collect();
    crate::sim::run_replicated(&scenario, &seeds)
}

/// Build the plan's base scenario (first scheme, first axis value).
pub fn base_scenario(plan: &ExperimentPlan, cache: &mut PolicyCache) -> Result<Scenario> {
    Ok(build_scenario(plan, plan.schemes[0], plan.values[0], cache)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let plan = parse_plan(
            "[network]\nn = 20\n[scheme]\nschemes = csma\n[sweep]\nhorizon = 100\nseed = 1\n",
        )
        .unwrap();
        assert_eq!(plan.n, 20);
        assert_eq!(plan.horizon, 100);
        assert_eq!(plan.seed, 1);
        assert_eq!(plan.schemes, vec![SchemeKind::Csma]);
        // Defaults from the star profile.
        assert_eq!(plan.cfg.k, 16);
        assert_eq!(plan.cfg.m, 7);
        assert_eq!(plan.cfg.t_slot, 24);
        assert_eq!(plan.cfg.t_beacon, 4);
        assert_eq!(plan.cfg.rho, 18);
        assert_eq!(plan.b_max, 5);
        assert_eq!(plan.gamma, 0.9);
        assert_eq!(plan.values, vec![0.5]);
    }

    #[test]
    fn semantic_error_on_impossible_cfp() {
        let err = parse_plan("[network]\nm = 17\n").unwrap_err();
        match err {
            Error::Semantic { field, .. } => assert_eq!(field, "network"),
            other => panic!("expected semantic error, got {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_plan("[network]\nn = 20\nbogus_key = 3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
        let err = parse_plan("n = 20\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn serialize_round_trips() {
        let mut plan = ExperimentPlan::default();
        plan.axis = SweepAxis::Theta;
        plan.values = vec![0.0, 0.1, 0.2];
        plan.schemes = vec![SchemeKind::Mdca, SchemeKind::Csma2];
        plan.replications = 7;
        plan.offered_traffic = 0.85;
        let text = serialize_plan(&plan);
        let reparsed = parse_plan(&text).unwrap();
        assert_eq!(reparsed, plan);
    }

    #[test]
    fn single_cell_plan_yields_one_row() {
        let mut plan = ExperimentPlan::default();
        plan.horizon = 30;
        plan.n = 4;
        plan.schemes = vec![SchemeKind::Csma2];
        plan.values = vec![0.4];
        let mut cache = PolicyCache::new();
        let rows = execute_rows(&plan, &mut cache).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "all");
        assert!(rows[0].pdr.min <= rows[0].pdr.mean && rows[0].pdr.mean <= rows[0].pdr.max);
    }

    #[test]
    fn hetero_axis_adds_group_rows() {
        let mut plan = ExperimentPlan::default();
        plan.horizon = 30;
        plan.n = 6;
        plan.schemes = vec![SchemeKind::Csma2];
        plan.axis = SweepAxis::HeteroRate;
        plan.values = vec![1.0];
        let mut cache = PolicyCache::new();
        let rows = execute_rows(&plan, &mut cache).unwrap();
        let groups: Vec<&str> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(groups, vec!["all", "low", "medium", "high"]);
    }

    #[test]
    fn csv_is_byte_identical_across_reruns() {
        let mut plan = ExperimentPlan::default();
        plan.horizon = 25;
        plan.n = 5;
        plan.schemes = vec![SchemeKind::Csma, SchemeKind::Csma2];
        plan.values = vec![0.3, 0.9];
        plan.replications = 3;
        let a = execute(&plan, &mut PolicyCache::new()).unwrap();
        let b = execute(&plan, &mut PolicyCache::new()).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("axis,scheme,group,pdr_mean"));
        assert_eq!(a.lines().count(), 1 + 2 * 2);
    }

    #[test]
    fn n_sweep_uses_congestion_rate() {
        let mut plan = ExperimentPlan::default();
        plan.axis = SweepAxis::Nodes;
        plan.values = vec![10.0];
        let (n, cfg, rates, _) = rates_for(&plan, 10.0);
        assert_eq!(n, 10);
        let expected = cfg.interval() as f64 / (cfg.t_tx as f64 * 10.0);
        assert!((rates[0] - expected).abs() < 1e-12);
        // That rate corresponds to unit offered traffic.
        assert!((crate::types::offered_traffic(n, rates[0], &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn policy_cache_counts_solves_and_round_trips() {
        let mut plan = ExperimentPlan::default();
        plan.n = 5;
        plan.schemes = vec![SchemeKind::Mdca];
        plan.values = vec![0.4, 0.8];
        let mut cache = PolicyCache::new();
        solve_and_cache_policies(&plan, &mut cache).unwrap();
        assert_eq!(cache.solver_invocations, 2);
        assert_eq!(cache.len(), 2);
        // Warm rerun: no further solves.
        solve_and_cache_policies(&plan, &mut cache).unwrap();
        assert_eq!(cache.solver_invocations, 2);

        let text = cache.to_text();
        let reloaded = PolicyCache::from_text(&text).unwrap();
        assert_eq!(reloaded.len(), 2);
        let batch = BatchPmf::new(&plan.batch).unwrap();
        let energy = crate::sim::EnergyModel::default();
        let mut reloaded = reloaded;
        for &value in &plan.values {
            let (n, cfg, rates, _) = rates_for(&plan, value);
            let fresh = cache
                .get_or_solve(n, &cfg, &plan.mac, rates[0], &batch, plan.theta, plan.b_max,
                    plan.gamma, energy.xi_x, energy.xi_c)
                .unwrap();
            let loaded = reloaded
                .get_or_solve(n, &cfg, &plan.mac, rates[0], &batch, plan.theta, plan.b_max,
                    plan.gamma, energy.xi_x, energy.xi_c)
                .unwrap();
            assert_eq!(fresh.action, loaded.action);
        }
        assert_eq!(reloaded.solver_invocations, 0);
    }

    #[test]
    fn mdca_n_sweep_caches_one_policy_per_size() {
        let mut plan = ExperimentPlan::default();
        plan.axis = SweepAxis::Nodes;
        plan.values = vec![4.0, 5.0, 6.0];
        plan.schemes = vec![SchemeKind::Mdca];
        let mut cache = PolicyCache::new();
        solve_and_cache_policies(&plan, &mut cache).unwrap();
        assert_eq!(cache.len(), 3);
    }
}
